#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "rhrn/architecture.hpp"
#include "rhrn/backbone.hpp"
#include "rhrn/decoder.hpp"
#include "rhrn/netpbm.hpp"

namespace rhrn {

/// Frozen encoder plus reverse-HRNet decoder sharing one parameter table.
/// Backbone parameters are named "backbone.*", everything else "decoder.*".
class SegmentationModel {
 public:
  SegmentationModel(const ArchitectureSpec& spec, std::uint64_t seed);
  SegmentationModel(const SegmentationModel&) = delete;
  SegmentationModel& operator=(const SegmentationModel&) = delete;

  /// Full-resolution (N,K,H,W) logits.
  VarF forward(const VarF& image, const Pass& pass, ForwardTrace* trace = nullptr) const;
  /// Eval-mode, untaped convenience.
  TensorF predict_logits(const TensorF& image) const;

  const ArchitectureSpec& spec() const { return spec_; }
  std::uint64_t fingerprint() const { return rhrn::fingerprint(spec_); }
  ParamTableF& parameters() { return table_; }
  const ParamTableF& parameters() const { return table_; }
  const Backbone& backbone() const { return *backbone_; }
  const Decoder& decoder() const { return *decoder_; }

 private:
  ArchitectureSpec spec_;
  ParamTableF table_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<Decoder> decoder_;
};

/// Channel-mean of image 0, min-max scaled to 0..255; a constant map gives 128.
GrayImage feature_map_to_gray(const TensorF& features);

/// Writes stride-<s>.pgm for every adapter output stream. Returns the paths
/// in stream order, finest first.
std::vector<std::filesystem::path> dump_feature_maps(const SegmentationModel& model, const TensorF& image,
                                                     const std::filesystem::path& out_dir);

}  // namespace rhrn
