#include "rhrn/model.hpp"

#include <algorithm>
#include <cmath>
#include <system_error>

namespace rhrn {

SegmentationModel::SegmentationModel(const ArchitectureSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng backbone_rng(seed);
  Rng decoder_rng(seed ^ 0x9E3779B97F4A7C15ull);
  backbone_ = std::make_unique<Backbone>(spec_, table_, backbone_rng);
  decoder_ = std::make_unique<Decoder>(spec_, table_, decoder_rng);
}

VarF SegmentationModel::forward(const VarF& image, const Pass& pass, ForwardTrace* trace) const {
  const FeaturePyramid pyramid = backbone_->encode(image, pass.tape);
  return (*decoder_)(pyramid, pass, trace);
}

TensorF SegmentationModel::predict_logits(const TensorF& image) const {
  return forward(VarF(image), Pass{nullptr, NormMode::Eval}).value();
}

GrayImage feature_map_to_gray(const TensorF& features) {
  const Shape& s = features.shape();
  if (s.rank() != 4) throw ValidationError("feature_map_to_gray: expected (N,C,H,W), got " + s.str());
  const Index C = s[1], H = s[2], W = s[3], HW = H * W;
  Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(HW);
  for (Index c = 0; c < C; ++c) mean += features.array().segment(c * HW, HW).cast<double>();
  mean /= static_cast<double>(C);

  GrayImage gray;
  gray.width = W;
  gray.height = H;
  gray.pixels.resize(static_cast<std::size_t>(HW));
  const double lo = mean.minCoeff(), hi = mean.maxCoeff();
  for (Index i = 0; i < HW; ++i) {
    double v = 128.0;
    if (hi > lo) v = std::round(255.0 * (mean[i] - lo) / (hi - lo));
    gray.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return gray;
}

std::vector<std::filesystem::path> dump_feature_maps(const SegmentationModel& model, const TensorF& image,
                                                     const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw ValidationError("cannot create output directory " + out_dir.string());
  }
  const Pass pass{nullptr, NormMode::Eval};
  const FeaturePyramid pyramid = model.backbone().encode(VarF(image));
  const StreamSet streams = model.decoder().adapters()(pyramid, pass);

  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    const auto path = out_dir / ("stride-" + std::to_string(pyramid.levels[i].stride) + ".pgm");
    write_pgm(path, feature_map_to_gray(streams[i].value()));
    written.push_back(path);
  }
  return written;
}

}  // namespace rhrn
