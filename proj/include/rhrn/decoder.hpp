#pragma once

#include <string>
#include <vector>

#include "rhrn/architecture.hpp"
#include "rhrn/backbone.hpp"
#include "rhrn/layers.hpp"

namespace rhrn {

using StreamSet = std::vector<VarF>;

/// 1x1 convolutions mapping each pyramid level to its stream width.
class AdapterBank {
 public:
  AdapterBank() = default;
  AdapterBank(const std::vector<Index>& level_channels, const std::vector<Index>& widths,
              ParamTableF& table, Rng& rng);

  StreamSet operator()(const FeaturePyramid& pyramid, const Pass& pass) const;
  const Conv2d& adapter(std::size_t level) const { return adapters_[level]; }
  std::size_t size() const { return adapters_.size(); }

 private:
  std::vector<Conv2d> adapters_;
};

/// One step of a downsampling chain. Intermediate steps keep the source
/// width and carry BN+ReLU; the last step maps to the target width with a
/// bias and no normalization.
struct DownStep {
  Conv2d conv;
  bool has_norm = false;
  BatchNorm2d norm;
};

/// Path from stream `from` into stream `to`. Lower-resolution sources use a
/// 1x1 conv followed by bilinear resize; higher-resolution sources use a
/// chain of (to - from) stride-2 3x3 convs.
struct StreamTransform {
  enum class Kind { Identity, Up, Down };
  Kind kind = Kind::Identity;
  Conv2d up;
  std::vector<DownStep> down;
};

/// All-to-all exchange: out_i = ReLU(sum_j T_{j->i}(stream_j)).
class FusionUnit {
 public:
  FusionUnit() = default;
  FusionUnit(const std::vector<Index>& widths, const std::string& name, ParamTableF& table, Rng& rng);

  StreamSet operator()(const StreamSet& streams, const Pass& pass) const;

  const StreamTransform& transform(std::size_t from, std::size_t to) const { return paths_[to][from]; }
  std::size_t streams() const { return widths_.size(); }

 private:
  std::vector<Index> widths_;
  std::vector<std::vector<StreamTransform>> paths_;  // [to][from]
};

/// `blocks` basic residual blocks per stream, then one fusion.
class DecoderStage {
 public:
  DecoderStage() = default;
  DecoderStage(const std::vector<Index>& widths, Index blocks, const std::string& name,
               ParamTableF& table, Rng& rng);

  StreamSet operator()(const StreamSet& streams, const Pass& pass) const;
  const FusionUnit& fusion() const { return fusion_; }

 private:
  std::vector<std::vector<BasicBlock>> blocks_;
  FusionUnit fusion_;
};

/// Folds the lowest-resolution stream into its neighbour (1x1 conv, resize,
/// add; no activation) and drops it.
class MergeUnit {
 public:
  MergeUnit() = default;
  MergeUnit(Index from_width, Index to_width, const std::string& name, ParamTableF& table, Rng& rng);

  StreamSet operator()(const StreamSet& streams, const Pass& pass) const;
  const Conv2d& conv() const { return conv_; }

 private:
  Conv2d conv_;
};

/// 1x1 conv to class logits, then bilinear resize to the input resolution.
class SegmentationHead {
 public:
  SegmentationHead() = default;
  SegmentationHead(Index width, Index num_classes, ParamTableF& table, Rng& rng);

  VarF operator()(const VarF& stream, Index out_height, Index out_width, const Pass& pass) const;
  const Conv2d& conv() const { return conv_; }

 private:
  Conv2d conv_;
};

/// Records what a forward pass did internally.
struct ForwardTrace {
  std::vector<std::size_t> stream_counts;  // one entry per stage, as entered
  StreamSet adapted;                       // adapter outputs, finest first
};

/// Reverse HRNet: adapt, then [stage, merge] until one stream is left, a
/// final stage, and the head.
class Decoder {
 public:
  Decoder(const ArchitectureSpec& spec, ParamTableF& table, Rng& rng);

  VarF operator()(const FeaturePyramid& pyramid, const Pass& pass, ForwardTrace* trace = nullptr) const;

  const AdapterBank& adapters() const { return adapters_; }
  const DecoderStage& stage(std::size_t i) const { return stages_[i]; }
  const MergeUnit& merge(std::size_t i) const { return merges_[i]; }
  const SegmentationHead& head() const { return head_; }
  std::size_t stage_count() const { return stages_.size(); }

 private:
  AdapterBank adapters_;
  std::vector<DecoderStage> stages_;
  std::vector<MergeUnit> merges_;
  SegmentationHead head_;
};

}  // namespace rhrn
