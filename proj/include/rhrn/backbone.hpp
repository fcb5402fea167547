#pragma once

#include <vector>

#include "rhrn/architecture.hpp"
#include "rhrn/layers.hpp"

namespace rhrn {

struct PyramidLevel {
  int stride = 0;
  VarF features;
};

/// Multi-scale encoder output, finest level first; strides strictly double.
struct FeaturePyramid {
  std::vector<PyramidLevel> levels;
  Index input_height = 0;
  Index input_width = 0;
};

/// Residual encoder. Parameters live under "backbone." in the table and are
/// created frozen when the spec asks for it. Normalization always runs on
/// stored statistics, so a frozen encoder is a pure function of its input.
class Backbone {
 public:
  Backbone(const ArchitectureSpec& spec, ParamTableF& table, Rng& rng);

  /// Maps (N,3,H,W) to the pyramid. With every backbone parameter frozen no
  /// tape node is recorded, whatever `tape` is.
  FeaturePyramid encode(const VarF& image, TapeF* tape = nullptr) const;

 private:
  VarF run_stage(std::size_t stage, VarF x, TapeF* tape) const;

  ArchitectureSpec spec_;
  Conv2d stem_conv1_, stem_conv2_;
  BatchNorm2d stem_bn1_, stem_bn2_;
  std::vector<std::vector<BasicBlock>> basic_;
  std::vector<std::vector<BottleneckBlock>> bottleneck_;
};

}  // namespace rhrn
