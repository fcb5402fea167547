#include "rhrn/metrics.hpp"

#include <json.hpp>

namespace rhrn {

ConfusionMatrix::ConfusionMatrix(Index num_classes) {
  if (num_classes < 1) throw ValidationError("confusion matrix needs at least one class");
  counts_ = Counts::Zero(num_classes, num_classes);
}

ConfusionMatrix ConfusionMatrix::from_counts(Counts counts, std::int64_t ignored) {
  if (counts.rows() != counts.cols() || counts.rows() < 1) throw ValidationError("confusion counts must be square");
  if ((counts.array() < 0).any() || ignored < 0) throw ValidationError("confusion counts must be non-negative");
  ConfusionMatrix cm(counts.rows());
  cm.counts_ = std::move(counts);
  cm.ignored_ = ignored;
  return cm;
}

void ConfusionMatrix::update(const LabelMap& prediction, const LabelMap& truth, int ignore_index) {
  if (prediction.batch != truth.batch || prediction.height != truth.height || prediction.width != truth.width) {
    throw ValidationError("confusion update: prediction and truth maps differ in shape");
  }
  const Index K = num_classes();
  // Validate first so a rejected update leaves the matrix untouched.
  for (Index n = 0; n < truth.batch; ++n) {
    for (Index y = 0; y < truth.height; ++y) {
      for (Index x = 0; x < truth.width; ++x) {
        const std::int32_t p = prediction.at(n, y, x);
        const std::int32_t t = truth.at(n, y, x);
        if (p < 0 || p >= K) {
          throw ValidationError("prediction " + std::to_string(p) + " outside [0," + std::to_string(K) +
                                ") at image " + std::to_string(n) + " (y=" + std::to_string(y) +
                                ", x=" + std::to_string(x) + ")");
        }
        if (t != ignore_index && (t < 0 || t >= K)) {
          throw ValidationError("truth label " + std::to_string(t) + " outside [0," + std::to_string(K) +
                                ") at image " + std::to_string(n) + " (y=" + std::to_string(y) +
                                ", x=" + std::to_string(x) + ")");
        }
      }
    }
  }
  for (std::size_t i = 0; i < truth.values.size(); ++i) {
    const std::int32_t t = truth.values[i];
    if (t == ignore_index) {
      ++ignored_;
    } else {
      ++counts_(t, prediction.values[i]);
    }
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes() != num_classes()) throw ValidationError("cannot merge confusion matrices of different K");
  counts_ += other.counts_;
  ignored_ += other.ignored_;
  return *this;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.counted_pixels();
  if (total == 0) throw ValidationError("pixel accuracy of an empty confusion matrix");
  return static_cast<double>(cm.counts().trace()) / static_cast<double>(total);
}

IouResult mean_iou(const ConfusionMatrix& cm) {
  if (cm.counted_pixels() == 0) throw ValidationError("mIoU of an empty confusion matrix");
  const auto& c = cm.counts();
  IouResult result;
  double sum = 0;
  int defined = 0;
  for (Index k = 0; k < cm.num_classes(); ++k) {
    const std::int64_t inter = c(k, k);
    const std::int64_t uni = c.row(k).sum() + c.col(k).sum() - inter;
    if (uni == 0) {
      result.per_class.emplace_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    result.per_class.emplace_back(iou);
    sum += iou;
    ++defined;
  }
  if (defined == 0) throw ValidationError("mIoU undefined: no class has a non-empty union");
  result.mean_iou = sum / defined;
  return result;
}

nlohmann::json metrics_report(const ConfusionMatrix& cm) {
  const IouResult iou = mean_iou(cm);
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& v : iou.per_class) per_class.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  nlohmann::json confusion = nlohmann::json::array();
  for (Index r = 0; r < cm.num_classes(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index k = 0; k < cm.num_classes(); ++k) row.push_back(cm.counts()(r, k));
    confusion.push_back(row);
  }
  return {
      {"pixel_accuracy", pixel_accuracy(cm)},
      {"pixel_accuracy_kind", "overall"},
      {"mean_iou", iou.mean_iou},
      {"per_class_iou", per_class},
      {"confusion", confusion},
      {"ignored_pixels", cm.ignored_pixels()},
  };
}

}  // namespace rhrn
