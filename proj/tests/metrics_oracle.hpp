#pragma once

#include <optional>
#include <random>
#include <vector>

#include "rhrn/tensor.hpp"

namespace rhrn::oracle {

/// Per-pixel double loop over plain nested vectors.
struct NaiveMetrics {
  std::vector<std::vector<std::int64_t>> counts;
  std::int64_t ignored = 0;
  double accuracy = 0;
  std::vector<std::optional<double>> iou;
  double miou = 0;
};

inline NaiveMetrics naive_metrics(const LabelMap& pred, const LabelMap& truth, int k, int ignore) {
  NaiveMetrics m;
  m.counts.assign(static_cast<std::size_t>(k), std::vector<std::int64_t>(static_cast<std::size_t>(k), 0));
  for (Index n = 0; n < truth.batch; ++n)
    for (Index y = 0; y < truth.height; ++y)
      for (Index x = 0; x < truth.width; ++x) {
        const int t = truth.at(n, y, x), p = pred.at(n, y, x);
        if (t == ignore) {
          ++m.ignored;
        } else {
          ++m.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
        }
      }
  std::int64_t diag = 0, total = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      total += m.counts[std::size_t(i)][std::size_t(j)];
      if (i == j) diag += m.counts[std::size_t(i)][std::size_t(j)];
    }
  m.accuracy = total > 0 ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
  double sum = 0;
  int defined = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += m.counts[std::size_t(c)][std::size_t(j)];
      col += m.counts[std::size_t(j)][std::size_t(c)];
    }
    const std::int64_t inter = m.counts[std::size_t(c)][std::size_t(c)];
    const std::int64_t uni = row + col - inter;
    if (uni == 0) {
      m.iou.emplace_back(std::nullopt);
    } else {
      m.iou.emplace_back(static_cast<double>(inter) / static_cast<double>(uni));
      sum += *m.iou.back();
      ++defined;
    }
  }
  m.miou = defined > 0 ? sum / defined : 0.0;
  return m;
}

/// Random prediction/truth pair; truth has an ignore fraction, and a few
/// classes may be absent entirely.
inline std::pair<LabelMap, LabelMap> random_maps(std::mt19937_64& rng, int k, Index h = 16, Index w = 16) {
  LabelMap pred(1, h, w), truth(1, h, w);
  std::uniform_int_distribution<int> cls(0, k - 1);
  std::uniform_real_distribution<double> u(0, 1);
  const double ignore_rate = u(rng) < 0.3 ? 0.0 : u(rng) * 0.5;
  const double agree_rate = u(rng);
  for (std::size_t i = 0; i < truth.values.size(); ++i) {
    truth.values[i] = u(rng) < ignore_rate ? 255 : cls(rng);
    pred.values[i] = (u(rng) < agree_rate && truth.values[i] != 255) ? truth.values[i] : cls(rng);
  }
  pred.values[0] = 0;
  truth.values[1] = 0;  // keep at least one counted pixel
  return {pred, truth};
}

}  // namespace rhrn::oracle
