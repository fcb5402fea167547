#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rhrn/tensor.hpp"

namespace rhrn {

/// Residual encoder topology: a stem followed by four stages at strides
/// 4/8/16/32. The variant stem stops at stride 2 and its output becomes an
/// extra pyramid level.
struct BackboneSpec {
  Index stem_channels = 16;
  std::array<Index, 4> stage_channels{16, 32, 64, 128};
  std::array<Index, 4> blocks_per_stage{1, 1, 1, 1};
  bool bottleneck = false;

  bool operator==(const BackboneSpec&) const = default;
};

/// Reverse-HRNet decoder: one stream per pyramid level (highest resolution
/// first), one stage per stream.
struct DecoderSpec {
  std::vector<Index> stream_widths{48, 96, 192, 384};
  std::vector<Index> blocks_per_stage{2, 2, 2, 2};

  bool operator==(const DecoderSpec&) const = default;
};

struct ArchitectureSpec {
  BackboneSpec backbone;
  DecoderSpec decoder;
  Index num_classes = 11;
  bool variant_extra_stream = false;
  bool freeze_backbone = true;

  bool operator==(const ArchitectureSpec&) const = default;

  /// Desk-scale default: 4 streams, widths 48/96/192/384, two blocks per stage.
  static ArchitectureSpec standard(Index num_classes);
  /// Extra stride-2 stream (width 24) and one block per stage.
  static ArchitectureSpec variant(Index num_classes);
  /// ResNet-50 stage layout (bottleneck blocks 3/4/6/3, widths 256..2048).
  static ArchitectureSpec resnet50(Index num_classes);

  int pyramid_levels() const { return variant_extra_stream ? 5 : 4; }
  /// Strides of the pyramid levels, finest first.
  std::vector<int> pyramid_strides() const;
  /// Channel count of each pyramid level, finest first.
  std::vector<Index> pyramid_channels() const;
  Index total_decoder_blocks() const;

  /// Throws ValidationError naming the first violated constraint.
  void validate() const;
};

/// Every input side must be a multiple of this.
inline constexpr Index kInputDivisor = 32;

void to_json(nlohmann::json& j, const ArchitectureSpec& spec);
void from_json(const nlohmann::json& j, ArchitectureSpec& spec);

/// Canonical serialization; the checkpoint fingerprint hashes this string.
std::string canonical_string(const ArchitectureSpec& spec);
/// 64-bit FNV-1a of canonical_string(spec).
std::uint64_t fingerprint(const ArchitectureSpec& spec);

void require_divisible_input(Index height, Index width);

}  // namespace rhrn
