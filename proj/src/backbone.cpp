#include "rhrn/backbone.hpp"

namespace rhrn {

Backbone::Backbone(const ArchitectureSpec& spec, ParamTableF& table, Rng& rng) : spec_(spec) {
  spec_.validate();
  const BackboneSpec& b = spec_.backbone;
  const bool frozen = spec_.freeze_backbone;
  // Standard stem: two stride-2 convs (stride 4). Variant: stride 1 then 2.
  const int first_stride = spec_.variant_extra_stream ? 1 : 2;
  stem_conv1_ = Conv2d::create(table, "backbone.stem.conv1", 3, b.stem_channels, 3, first_stride, false, frozen, rng);
  stem_bn1_ = BatchNorm2d::create(table, "backbone.stem.bn1", b.stem_channels, frozen);
  stem_conv2_ = Conv2d::create(table, "backbone.stem.conv2", b.stem_channels, b.stem_channels, 3, 2, false, frozen, rng);
  stem_bn2_ = BatchNorm2d::create(table, "backbone.stem.bn2", b.stem_channels, frozen);

  basic_.resize(4);
  bottleneck_.resize(4);
  Index in = b.stem_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const Index out = b.stage_channels[s];
    for (Index k = 0; k < b.blocks_per_stage[s]; ++k) {
      int stride = 1;
      if (k == 0 && (s > 0 || spec_.variant_extra_stream)) stride = 2;
      const std::string name = "backbone.stage" + std::to_string(s) + ".block" + std::to_string(k);
      if (b.bottleneck) {
        bottleneck_[s].push_back(BottleneckBlock::create(table, name, in, out, stride, frozen, rng));
      } else {
        basic_[s].push_back(BasicBlock::create(table, name, in, out, stride, frozen, rng));
      }
      in = out;
    }
  }
}

VarF Backbone::run_stage(std::size_t stage, VarF x, TapeF* tape) const {
  for (const auto& block : basic_[stage]) x = block(x, NormMode::Eval, tape);
  for (const auto& block : bottleneck_[stage]) x = block(x, NormMode::Eval, tape);
  return x;
}

FeaturePyramid Backbone::encode(const VarF& image, TapeF* tape) const {
  const Shape& s = image.shape();
  if (s.rank() != 4 || s[1] != 3) throw ValidationError("encode: expected (N,3,H,W) image, got " + s.str());
  require_divisible_input(s[2], s[3]);

  FeaturePyramid pyramid;
  pyramid.input_height = s[2];
  pyramid.input_width = s[3];
  const Pass pass{tape, NormMode::Eval};
  VarF x = relu(stem_bn1_(stem_conv1_(image, pass), NormMode::Eval, tape));
  x = relu(stem_bn2_(stem_conv2_(x, pass), NormMode::Eval, tape));
  int stride = spec_.variant_extra_stream ? 2 : 4;
  if (spec_.variant_extra_stream) pyramid.levels.push_back({stride, x});
  for (std::size_t stage = 0; stage < 4; ++stage) {
    x = run_stage(stage, x, tape);
    if (stage > 0 || spec_.variant_extra_stream) stride *= 2;
    pyramid.levels.push_back({stride, x});
  }
  return pyramid;
}

}  // namespace rhrn
