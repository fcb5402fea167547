#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "rhrn/tensor.hpp"

namespace rhrn {

inline constexpr int kIgnoreIndex = 255;

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  using Counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

  explicit ConfusionMatrix(Index num_classes);

  /// Accumulates one prediction/truth pair of identical geometry. Truth
  /// pixels equal to ignore_index are tallied separately.
  void update(const LabelMap& prediction, const LabelMap& truth, int ignore_index = kIgnoreIndex);

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  Index num_classes() const { return counts_.rows(); }
  const Counts& counts() const { return counts_; }
  std::int64_t ignored_pixels() const { return ignored_; }
  std::int64_t counted_pixels() const { return counts_.sum(); }

  /// Direct construction from counts, for reports and tests.
  static ConfusionMatrix from_counts(Counts counts, std::int64_t ignored = 0);

 private:
  Counts counts_;
  std::int64_t ignored_ = 0;
};

struct IouResult {
  double mean_iou = 0;
  std::vector<std::optional<double>> per_class;  // nullopt: class absent from truth and prediction
};

/// Overall pixel accuracy, trace / total.
double pixel_accuracy(const ConfusionMatrix& cm);

/// Classes with a zero union are undefined and excluded from the mean.
IouResult mean_iou(const ConfusionMatrix& cm);

/// {pixel_accuracy, mean_iou, per_class_iou, confusion, ignored_pixels}
nlohmann::json metrics_report(const ConfusionMatrix& cm);

}  // namespace rhrn
