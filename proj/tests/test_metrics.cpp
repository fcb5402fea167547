#include <algorithm>
#include <numeric>
#include <random>

#include <doctest.h>

#include "metrics_oracle.hpp"
#include "rhrn/metrics.hpp"

using namespace rhrn;

namespace {

LabelMap map2x2(std::initializer_list<int> v) {
  LabelMap m(1, 2, 2);
  std::copy(v.begin(), v.end(), m.values.begin());
  return m;
}

ConfusionMatrix counts(std::initializer_list<std::initializer_list<std::int64_t>> rows) {
  const auto k = static_cast<Index>(rows.size());
  ConfusionMatrix::Counts c(k, k);
  Index r = 0;
  for (const auto& row : rows) {
    Index j = 0;
    for (auto v : row) c(r, j++) = v;
    ++r;
  }
  return ConfusionMatrix::from_counts(c);
}

}  // namespace

TEST_CASE("worked example") {
  ConfusionMatrix cm(2);
  cm.update(map2x2({0, 1, 1, 1}), map2x2({0, 0, 1, 1}));
  CHECK(cm.counts()(0, 0) == 1);
  CHECK(cm.counts()(0, 1) == 1);
  CHECK(cm.counts()(1, 0) == 0);
  CHECK(cm.counts()(1, 1) == 2);
  CHECK(pixel_accuracy(cm) == 0.75);
  const IouResult iou = mean_iou(cm);
  CHECK(*iou.per_class[0] == 0.5);
  CHECK(*iou.per_class[1] == 2.0 / 3.0);
  CHECK(iou.mean_iou == (0.5 + 2.0 / 3.0) / 2.0);
  CHECK(iou.mean_iou == doctest::Approx(7.0 / 12.0));
}

TEST_CASE("perfect prediction is diagonal with unit scores") {
  ConfusionMatrix cm(3);
  const LabelMap m = map2x2({0, 2, 2, 0});
  cm.update(m, m);
  CHECK(cm.counts()(0, 0) == 2);
  CHECK(cm.counts()(2, 2) == 2);
  CHECK(cm.counts().sum() == 4);
  CHECK(pixel_accuracy(cm) == 1.0);
  const IouResult iou = mean_iou(cm);
  CHECK(iou.mean_iou == 1.0);
  CHECK(!iou.per_class[1].has_value());
}

TEST_CASE("all-void truth only tallies ignored pixels") {
  ConfusionMatrix cm(2);
  cm.update(map2x2({0, 1, 0, 1}), map2x2({255, 255, 255, 255}));
  CHECK(cm.counts().sum() == 0);
  CHECK(cm.ignored_pixels() == 4);
  CHECK_THROWS_AS(pixel_accuracy(cm), ValidationError);
  CHECK_THROWS_AS(mean_iou(cm), ValidationError);
}

TEST_CASE("accuracy corner cases") {
  CHECK(pixel_accuracy(counts({{3, 0}, {0, 5}})) == 1.0);
  CHECK(pixel_accuracy(counts({{0, 2}, {7, 0}})) == 0.0);
  CHECK(pixel_accuracy(counts({{1, 1}, {0, 2}})) == 0.75);
}

TEST_CASE("rejections carry coordinates and leave the matrix untouched") {
  ConfusionMatrix cm(2);
  cm.update(map2x2({0, 0, 0, 0}), map2x2({0, 0, 0, 0}));
  try {
    cm.update(map2x2({0, 0, 0, 2}), map2x2({0, 0, 0, 0}));
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("y=1, x=1") != std::string::npos);
  }
  CHECK_THROWS_AS(cm.update(map2x2({0, 0, 0, 0}), map2x2({0, 3, 0, 0})), ValidationError);
  CHECK_THROWS_AS(cm.update(map2x2({0, 0, 0, 0}), LabelMap(1, 2, 3)), ValidationError);
  CHECK(cm.counts()(0, 0) == 4);
  CHECK(cm.counts().sum() == 4);
}

TEST_CASE("random maps equal the naive oracle exactly") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> kd(2, 5);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = kd(rng);
    const auto [pred, truth] = oracle::random_maps(rng, k);
    ConfusionMatrix cm(k);
    cm.update(pred, truth);
    const auto ref = oracle::naive_metrics(pred, truth, k, 255);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) CHECK(cm.counts()(i, j) == ref.counts[std::size_t(i)][std::size_t(j)]);
    CHECK(cm.ignored_pixels() == ref.ignored);
    CHECK(cm.counted_pixels() + cm.ignored_pixels() == 256);
    CHECK(pixel_accuracy(cm) == ref.accuracy);
    const IouResult iou = mean_iou(cm);
    CHECK(iou.mean_iou == ref.miou);
    CHECK(iou.per_class == ref.iou);
  }
}

TEST_CASE("additivity and permutation consistency") {
  std::mt19937_64 rng(5);
  const int k = 4;
  ConfusionMatrix total(k), permuted(k);
  ConfusionMatrix summed(k);
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int image = 0; image < 6; ++image) {
    auto [pred, truth] = oracle::random_maps(rng, k);
    total.update(pred, truth);
    ConfusionMatrix one(k);
    one.update(pred, truth);
    summed += one;
    for (auto& v : pred.values) v = perm[std::size_t(v)];
    for (auto& v : truth.values)
      if (v != 255) v = perm[std::size_t(v)];
    permuted.update(pred, truth);
  }
  CHECK(summed.counts() == total.counts());
  CHECK(summed.ignored_pixels() == total.ignored_pixels());
  CHECK(pixel_accuracy(permuted) == doctest::Approx(pixel_accuracy(total)).epsilon(1e-15));
  CHECK(mean_iou(permuted).mean_iou == doctest::Approx(mean_iou(total).mean_iou).epsilon(1e-12));
  ConfusionMatrix other(3);
  CHECK_THROWS_AS(total += other, ValidationError);
}

TEST_CASE("report document") {
  const nlohmann::json r = metrics_report(counts({{1, 1, 0}, {0, 2, 0}, {0, 0, 0}}));
  CHECK(r["pixel_accuracy"].get<double>() == 0.75);
  CHECK(r["pixel_accuracy_kind"] == "overall");
  CHECK(r["mean_iou"].get<double>() == doctest::Approx(7.0 / 12.0));
  CHECK(r["per_class_iou"][2].is_null());
  CHECK(r["confusion"][0][1].get<int>() == 1);
  CHECK(r["ignored_pixels"].get<int>() == 0);
}
