#include <cmath>
#include <limits>
#include <random>

#include <doctest.h>

#include "oracle.hpp"
#include "rhrn/ops.hpp"
#include "support.hpp"

using namespace rhrn;
using rhrn::testing::random_tensor;

namespace {

VarF constant(TensorF t) { return VarF(std::move(t)); }

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape validation and numel") {
    CHECK(Shape{2, 3, 4, 5}.numel() == 120);
    CHECK_THROWS_AS(Shape({2, 0}), ValidationError);
    CHECK_THROWS_AS(Shape({1, 1, 1, 1, 1}), ValidationError);
    CHECK_THROWS_AS(TensorF::from(Shape{2}, {1.f}), ValidationError);
    CHECK(TensorF::from(Shape{2, 2}, {1, 2, 3, 4}).reshaped(Shape{4})[3] == 4.f);
    CHECK_THROWS_AS(TensorF(Shape{4}).reshaped(Shape{3}), ValidationError);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("identity 1x1 weights reproduce the input exactly") {
    std::mt19937_64 rng(1);
    const TensorF x = random_tensor<float>(Shape{2, 5, 6, 7}, rng);
    TensorF w(Shape{5, 5, 1, 1});
    for (Index c = 0; c < 5; ++c) w.at(c, c, 0, 0) = 1.f;
    const VarF y = conv2d(constant(x), constant(w), VarF(), {1, 0});
    CHECK(testing::bit_identical(y.value(), x));
  }

  TEST_CASE("all-ones 3x3 example") {
    const VarF y = conv2d(constant(TensorF::constant(Shape{1, 1, 3, 3}, 1.f)),
                          constant(TensorF::constant(Shape{1, 1, 3, 3}, 1.f)), VarF(), {1, 1});
    const std::vector<float> expected{4, 6, 4, 6, 9, 6, 4, 6, 4};
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    for (Index i = 0; i < 9; ++i) CHECK(y.value()[i] == expected[static_cast<std::size_t>(i)]);
  }

  TEST_CASE("adapter-sized shape") {
    const VarF y = conv2d(constant(TensorF(Shape{1, 256, 16, 16})), constant(TensorF(Shape{48, 256, 1, 1})),
                          VarF(), {1, 0});
    CHECK(y.shape() == Shape{1, 48, 16, 16});
  }

  TEST_CASE("matches the loop oracle for strides and paddings") {
    std::mt19937_64 rng(3);
    for (int stride : {1, 2, 3})
      for (int pad : {0, 1, 2})
        for (Index k : {1, 3, 5}) {
          const TensorF x = random_tensor<float>(Shape{2, 3, 9, 8}, rng);
          const TensorF w = random_tensor<float>(Shape{4, 3, k, k}, rng);
          const TensorF b = random_tensor<float>(Shape{4}, rng);
          if (9 + 2 * pad < k) continue;
          const VarF y = conv2d(constant(x), constant(w), constant(b), {stride, pad});
          const TensorD bd = b.cast<double>();
          const TensorD ref = oracle::conv(x.cast<double>(), w.cast<double>(), &bd, stride, pad);
          REQUIRE(y.shape() == ref.shape());
          CHECK(testing::relative_error(y.value(), ref) < 1e-5);
        }
  }

  TEST_CASE("output extent follows the closed form for random draws") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<Index> dim(1, 12), ch(1, 4);
    std::uniform_int_distribution<int> st(1, 3), pd(0, 2), kk(0, 2);
    for (int trial = 0; trial < 200; ++trial) {
      const Index h = dim(rng), w = dim(rng), k = 2 * kk(rng) + 1;
      const int s = st(rng), p = pd(rng);
      if (h + 2 * p < k || w + 2 * p < k) continue;
      const Index cin = ch(rng), cout = ch(rng);
      const VarF y = conv2d(constant(TensorF(Shape{1, cin, h, w})), constant(TensorF(Shape{cout, cin, k, k})),
                            VarF(), {s, p});
      CHECK(y.shape() == Shape{1, cout, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1});
    }
  }

  TEST_CASE("rejections") {
    const VarF x = constant(TensorF(Shape{1, 3, 8, 8}));
    SUBCASE("channel mismatch names both shapes") {
      try {
        conv2d(x, constant(TensorF(Shape{4, 2, 3, 3})), VarF(), {1, 1});
        FAIL("expected rejection");
      } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(1,3,8,8)") != std::string::npos);
        CHECK(msg.find("(4,2,3,3)") != std::string::npos);
      }
    }
    SUBCASE("even kernel") { CHECK_THROWS_AS(conv2d(x, constant(TensorF(Shape{4, 3, 2, 2})), VarF(), {1, 0}), ValidationError); }
    SUBCASE("too small") { CHECK_THROWS_AS(conv2d(x, constant(TensorF(Shape{4, 3, 11, 11})), VarF(), {1, 1}), ValidationError); }
    SUBCASE("non-finite input") {
      TensorF bad(Shape{1, 3, 8, 8});
      bad[5] = std::numeric_limits<float>::quiet_NaN();
      CHECK_THROWS_AS(conv2d(constant(bad), constant(TensorF(Shape{4, 3, 3, 3})), VarF(), {1, 1}), NumericFailure);
    }
  }
}

TEST_SUITE("bilinear_resize") {
  TEST_CASE("half-pixel row example") {
    const VarF y = bilinear_resize(constant(TensorF::from(Shape{1, 1, 1, 2}, {0, 2})), 1, 4);
    CHECK(y.value()[0] == doctest::Approx(0.0));
    CHECK(y.value()[1] == doctest::Approx(0.5));
    CHECK(y.value()[2] == doctest::Approx(1.5));
    CHECK(y.value()[3] == doctest::Approx(2.0));
  }

  TEST_CASE("constant input stays constant") {
    const VarF y = bilinear_resize(constant(TensorF::constant(Shape{2, 3, 5, 7}, 1.25f)), 13, 4);
    CHECK(y.shape() == Shape{2, 3, 13, 4});
    CHECK((y.value().array() == 1.25f).all());
  }

  TEST_CASE("same size is the identity") {
    std::mt19937_64 rng(2);
    const TensorF x = random_tensor<float>(Shape{1, 2, 6, 6}, rng);
    CHECK(testing::bit_identical(bilinear_resize(constant(x), 6, 6).value(), x));
  }

  TEST_CASE("matches the loop oracle") {
    std::mt19937_64 rng(4);
    for (auto [oh, ow] : {std::pair<Index, Index>{8, 8}, {3, 11}, {1, 1}, {16, 5}}) {
      const TensorF x = random_tensor<float>(Shape{2, 2, 5, 6}, rng);
      CHECK(testing::relative_error(bilinear_resize(constant(x), oh, ow).value(), oracle::resize(x.cast<double>(), oh, ow)) < 1e-6);
    }
  }

  TEST_CASE("rejects empty target") { CHECK_THROWS_AS(bilinear_resize(constant(TensorF(Shape{1, 1, 2, 2})), 0, 2), ValidationError); }
}

TEST_SUITE("batch_norm") {
  TEST_CASE("eval with unit statistics is the identity up to epsilon") {
    std::mt19937_64 rng(5);
    const TensorF x = random_tensor<float>(Shape{2, 3, 4, 4}, rng);
    TensorF rm(Shape{3}), rv = TensorF::constant(Shape{3}, 1.f);
    const VarF y = batch_norm(constant(x), constant(TensorF::constant(Shape{3}, 1.f)), constant(TensorF(Shape{3})),
                              rm, rv, {NormMode::Eval});
    CHECK(testing::max_abs_diff(y.value(), x) < 1e-5);
  }

  TEST_CASE("train mode normalizes per channel and updates running statistics") {
    std::mt19937_64 rng(6);
    const TensorF x = random_tensor<float>(Shape{2, 3, 4, 4}, rng, 1.0, 5.0);
    TensorF rm(Shape{3}), rv = TensorF::constant(Shape{3}, 1.f);
    const VarF y = batch_norm(constant(x), constant(TensorF::constant(Shape{3}, 1.f)), constant(TensorF(Shape{3})),
                              rm, rv, {NormMode::Train, 0.1, 1e-5, true});
    for (Index c = 0; c < 3; ++c) {
      double s = 0, s2 = 0, xs = 0, xs2 = 0;
      for (Index n = 0; n < 2; ++n)
        for (Index i = 0; i < 16; ++i) {
          const double v = y.value().at(n, c, i / 4, i % 4), u = x.at(n, c, i / 4, i % 4);
          s += v, s2 += v * v, xs += u, xs2 += u * u;
        }
      CHECK(std::abs(s / 32) < 1e-5);
      CHECK(s2 / 32 == doctest::Approx(1.0).epsilon(1e-3));
      const double mean = xs / 32, unbiased = (xs2 - 32 * mean * mean) / 31;
      CHECK(rm[c] == doctest::Approx(0.1 * mean).epsilon(1e-5));
      CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-5));
    }
  }

  TEST_CASE("gamma and beta apply affinely after normalization") {
    const TensorF x = TensorF::from(Shape{1, 1, 2, 2}, {-1, 1, -1, 1});
    TensorF rm(Shape{1}), rv = TensorF::constant(Shape{1}, 1.f);
    const VarF y = batch_norm(constant(x), constant(TensorF::from(Shape{1}, {2})), constant(TensorF::from(Shape{1}, {3})),
                              rm, rv, {NormMode::Train, 0.1, 1e-12, false});
    for (Index i = 0; i < 4; ++i) CHECK(y.value()[i] == doctest::Approx(2 * x[i] + 3).epsilon(1e-6));
    CHECK(rm[0] == 0.f);
    CHECK(rv[0] == 1.f);
  }

  TEST_CASE("rejects non-positive epsilon") {
    TensorF rm(Shape{1}), rv = TensorF::constant(Shape{1}, 1.f);
    CHECK_THROWS_AS(batch_norm(constant(TensorF(Shape{1, 1, 2, 2})), constant(TensorF(Shape{1})),
                               constant(TensorF(Shape{1})), rm, rv, {NormMode::Eval, 0.1, 0.0}),
                    ValidationError);
  }
}

TEST_SUITE("elementwise") {
  TEST_CASE("relu definition, idempotence and zero subgradient") {
    const VarF y = relu(constant(TensorF::from(Shape{3}, {-1, 0, 2})));
    CHECK(y.value()[0] == 0.f);
    CHECK(y.value()[1] == 0.f);
    CHECK(y.value()[2] == 2.f);

    std::mt19937_64 rng(7);
    const TensorF x = random_tensor<float>(Shape{2, 3, 4, 4}, rng);
    CHECK(testing::bit_identical(relu(relu(constant(x))).value(), relu(constant(x)).value()));

    Tape<float> tape;
    const VarF v = tape.variable(TensorF::from(Shape{4}, {-3, -1, 0, 0}));
    const auto g = tape.backward(sum(relu(v)));
    CHECK((g.of(v).array() == 0.f).all());
  }

  TEST_CASE("add identity, commutativity, and unit gradient") {
    std::mt19937_64 rng(8);
    const TensorF a = random_tensor<float>(Shape{2, 3, 4, 4}, rng), b = random_tensor<float>(Shape{2, 3, 4, 4}, rng);
    CHECK(testing::bit_identical(add(constant(a), constant(TensorF(a.shape()))).value(), a));
    CHECK(testing::bit_identical(add(constant(a), constant(b)).value(), add(constant(b), constant(a)).value()));
    Tape<float> tape;
    const VarF va = tape.variable(a);
    const auto g = tape.backward(sum(add(va, constant(b))));
    CHECK((g.of(va).array() == 1.f).all());
    CHECK_THROWS_AS(add(constant(a), constant(TensorF(Shape{2, 3, 4, 5}))), ValidationError);
  }

  TEST_CASE("sum of x*x/2 has gradient x") {
    std::mt19937_64 rng(9);
    const TensorD x = random_tensor<double>(Shape{3, 4}, rng);
    Tape<double> tape;
    const Var<double> v = tape.variable(x);
    const auto g = tape.backward(scale(sum(mul(v, v)), 0.5));
    CHECK(testing::max_abs_diff(g.of(v), x) < 1e-15);
  }
}

TEST_SUITE("concat_channels") {
  TEST_CASE("single part is the identity") {
    std::mt19937_64 rng(10);
    const std::vector<VarF> parts{constant(random_tensor<float>(Shape{1, 2, 3, 3}, rng))};
    CHECK(testing::bit_identical(concat_channels(std::span<const VarF>(parts)).value(), parts[0].value()));
  }

  TEST_CASE("shape arithmetic and slicing recovers parts") {
    std::mt19937_64 rng(12);
    const std::vector<VarF> parts{constant(random_tensor<float>(Shape{1, 2, 4, 4}, rng)),
                                  constant(random_tensor<float>(Shape{1, 3, 4, 4}, rng))};
    const VarF cat = concat_channels(std::span<const VarF>(parts));
    CHECK(cat.shape() == Shape{1, 5, 4, 4});
    CHECK(testing::bit_identical(slice_channels(cat, 0, 2).value(), parts[0].value()));
    CHECK(testing::bit_identical(slice_channels(cat, 2, 3).value(), parts[1].value()));
  }

  TEST_CASE("spatial mismatch rejected") {
    const std::vector<VarF> parts{constant(TensorF(Shape{1, 2, 4, 4})), constant(TensorF(Shape{1, 2, 4, 5}))};
    CHECK_THROWS_AS(concat_channels(std::span<const VarF>(parts)), ValidationError);
    CHECK_THROWS_AS(slice_channels(parts[0], 1, 2), ValidationError);
  }
}

TEST_SUITE("softmax_cross_entropy_mean") {
  TEST_CASE("uniform logits give ln K") {
    for (Index k : {2, 3, 11}) {
      const VarF loss = softmax_cross_entropy_mean(constant(TensorF::constant(Shape{2, k, 3, 3}, 0.7f)),
                                                   LabelMap(2, 3, 3, 1), 255);
      CHECK(loss.value()[0] == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-6));
    }
  }

  TEST_CASE("one pixel closed form") {
    const VarF loss = softmax_cross_entropy_mean(constant(TensorF::from(Shape{1, 2, 1, 1}, {1, 0})), LabelMap(1, 1, 1, 0), 255);
    CHECK(loss.value()[0] == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-6));
  }

  TEST_CASE("loss vanishes as the correct margin grows") {
    double previous = 1e9;
    for (float margin : {1.f, 3.f, 6.f, 12.f}) {
      const double loss =
          softmax_cross_entropy_mean(constant(TensorF::from(Shape{1, 3, 1, 1}, {margin, 0, 0})), LabelMap(1, 1, 1, 0), 255)
              .value()[0];
      CHECK(loss < previous);
      previous = loss;
    }
    CHECK(previous < 2e-5);
  }

  TEST_CASE("ignored pixels contribute neither value nor gradient") {
    std::mt19937_64 rng(13);
    const TensorF logits = random_tensor<float>(Shape{1, 3, 2, 2}, rng, -2, 2);
    LabelMap labels(1, 2, 2, 255);
    labels.values[0] = 1;
    Tape<float> tape;
    const VarF v = tape.variable(logits);
    const VarF loss = softmax_cross_entropy_mean(v, labels, 255);
    double m = -1e9, z = 0;
    for (Index c = 0; c < 3; ++c) m = std::max(m, double(logits.at(0, c, 0, 0)));
    for (Index c = 0; c < 3; ++c) z += std::exp(logits.at(0, c, 0, 0) - m);
    CHECK(loss.value()[0] == doctest::Approx(m + std::log(z) - logits.at(0, 1, 0, 0)).epsilon(1e-5));
    const auto g = tape.backward(loss);
    for (Index c = 0; c < 3; ++c)
      for (Index p = 1; p < 4; ++p) CHECK(g.of(v).at(0, c, p / 2, p % 2) == 0.f);
  }

  TEST_CASE("rejections") {
    CHECK_THROWS_AS(softmax_cross_entropy_mean(constant(TensorF(Shape{1, 2, 2, 2})), LabelMap(1, 2, 2, 255), 255),
                    ValidationError);
    CHECK_THROWS_AS(softmax_cross_entropy_mean(constant(TensorF(Shape{1, 2, 2, 2})), LabelMap(1, 2, 2, 2), 255),
                    ValidationError);
  }
}

TEST_SUITE("tape") {
  TEST_CASE("sum gradient is all ones") {
    Tape<float> tape;
    const VarF x = tape.variable(TensorF::from(Shape{2, 2}, {1, -2, 3, 4}));
    const auto g = tape.backward(sum(x));
    CHECK((g.of(x).array() == 1.f).all());
  }

  TEST_CASE("backward twice is rejected and the tape freezes") {
    Tape<float> tape;
    const VarF x = tape.variable(TensorF::from(Shape{1}, {2}));
    const VarF loss = sum(mul(x, x));
    tape.backward(loss);
    CHECK(tape.consumed());
    CHECK_THROWS_AS(tape.backward(loss), ValidationError);
    CHECK_THROWS_AS(tape.variable(TensorF(Shape{1})), ValidationError);
  }

  TEST_CASE("non-scalar loss rejected") {
    Tape<float> tape;
    const VarF x = tape.variable(TensorF(Shape{2}));
    CHECK_THROWS_AS(tape.backward(relu(x)), ValidationError);
  }

  TEST_CASE("visited nodes equal nodes reachable from the loss") {
    Tape<float> tape;
    const VarF a = tape.variable(TensorF::from(Shape{2}, {1, 2}));
    const VarF b = tape.variable(TensorF::from(Shape{2}, {3, 4}));
    const VarF unused = relu(add(b, b));  // recorded but unreachable
    (void)unused;
    const VarF loss = sum(mul(a, a));  // a, mul, sum
    CHECK(tape.size() == 6);
    const auto g = tape.backward(loss);
    CHECK(g.visited_nodes == 3);
  }

  TEST_CASE("operations on constants record nothing") {
    Tape<float> tape;
    const VarF c = constant(TensorF::from(Shape{2}, {1, 2}));
    const VarF r = relu(add(c, c));
    CHECK(!r.requires_grad());
    CHECK(tape.size() == 0);
  }

  TEST_CASE("parameters: frozen entries are constants, unreached ones get zeros") {
    ParameterTable<float> table;
    auto& used = table.create("used", Shape{2}, ParamKind::Weight, false);
    auto& idle = table.create("idle", Shape{3}, ParamKind::Weight, false);
    auto& frozen = table.create("frozen", Shape{2}, ParamKind::Weight, true);
    auto& buffer = table.create("buffer", Shape{2}, ParamKind::Buffer, false);
    used.value->array() << 1, 2;
    Tape<float> tape;
    const VarF u = tape.watch(used);
    const VarF u2 = tape.watch(used);
    CHECK(u.node() == u2.node());
    tape.watch(idle);
    CHECK(!tape.watch(frozen).requires_grad());
    CHECK(!tape.watch(buffer).requires_grad());
    const auto g = tape.backward(sum(mul(u, u2)));
    REQUIRE(g.find(used) != nullptr);
    CHECK((*g.find(used))[0] == 2.f);
    CHECK((*g.find(used))[1] == 4.f);
    REQUIRE(g.find(idle) != nullptr);
    CHECK((g.find(idle)->array() == 0.f).all());
    CHECK(g.find(frozen) == nullptr);
    CHECK(g.find(buffer) == nullptr);
  }

  TEST_CASE("repeated runs are bit-identical") {
    auto run = [] {
      std::mt19937_64 rng(42);
      const TensorF x = random_tensor<float>(Shape{2, 3, 8, 8}, rng), w = random_tensor<float>(Shape{4, 3, 3, 3}, rng);
      Tape<float> tape;
      const VarF vx = tape.variable(x), vw = tape.variable(w);
      const VarF y = bilinear_resize(relu(conv2d(vx, vw, VarF(), {2, 1})), 7, 5);
      const auto g = tape.backward(sum(mul(y, y)));
      return std::tuple{y.value(), g.of(vx), g.of(vw)};
    };
    const auto [y1, gx1, gw1] = run();
    const auto [y2, gx2, gw2] = run();
    CHECK(testing::bit_identical(y1, y2));
    CHECK(testing::bit_identical(gx1, gx2));
    CHECK(testing::bit_identical(gw1, gw2));
  }
}

TEST_SUITE("argmax") {
  TEST_CASE("shift invariance and first-max tie break") {
    std::mt19937_64 rng(14);
    TensorF logits = random_tensor<float>(Shape{2, 4, 3, 3}, rng);
    const LabelMap a = argmax_channels(logits);
    logits.array() += 7.5f;
    CHECK(argmax_channels(logits).values == a.values);
    CHECK(argmax_channels(TensorF(Shape{1, 3, 1, 1})).values[0] == 0);
  }
}
