#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rhrn/decoder.hpp"

// Straight-line double-precision re-implementations used as test oracles.
// Deliberately loop-based and independent of the library kernels.

namespace rhrn::oracle {

inline TensorD conv(const TensorD& x, const TensorD& w, const TensorD* b, int stride, int pad) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const Index oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  TensorD y(Shape{n, cout, oh, ow});
  for (Index in = 0; in < n; ++in)
    for (Index o = 0; o < cout; ++o)
      for (Index yy = 0; yy < oh; ++yy)
        for (Index xx = 0; xx < ow; ++xx) {
          double acc = b != nullptr ? (*b)[o] : 0.0;
          for (Index c = 0; c < cin; ++c)
            for (Index dy = 0; dy < kh; ++dy)
              for (Index dx = 0; dx < kw; ++dx) {
                const Index sy = yy * stride - pad + dy, sx = xx * stride - pad + dx;
                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                acc += x.at(in, c, sy, sx) * w.at(o, c, dy, dx);
              }
          y.at(in, o, yy, xx) = acc;
        }
  return y;
}

inline TensorD resize(const TensorD& x, Index oh, Index ow) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  TensorD y(Shape{n, c, oh, ow});
  auto src = [](Index i, Index in, Index out) {
    const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (Index in = 0; in < n; ++in)
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          const double sy = src(i, h, oh), sx = src(j, w, ow);
          const auto y0 = static_cast<Index>(std::floor(sy)), x0 = static_cast<Index>(std::floor(sx));
          const Index y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
          const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
          y.at(in, ch, i, j) = (1 - fy) * (1 - fx) * x.at(in, ch, y0, x0) + (1 - fy) * fx * x.at(in, ch, y0, x1) +
                               fy * (1 - fx) * x.at(in, ch, y1, x0) + fy * fx * x.at(in, ch, y1, x1);
        }
  return y;
}

inline TensorD batch_norm(const TensorD& x, const TensorD& gamma, const TensorD& beta, const TensorD& running_mean,
                          const TensorD& running_var, bool train, double eps = 1e-5) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  TensorD y(x.shape());
  for (Index ch = 0; ch < c; ++ch) {
    double mean = running_mean[ch], var = running_var[ch];
    if (train) {
      double s = 0, s2 = 0;
      for (Index in = 0; in < n; ++in)
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < w; ++j) s += x.at(in, ch, i, j);
      const double m = static_cast<double>(n * h * w);
      mean = s / m;
      for (Index in = 0; in < n; ++in)
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < w; ++j) s2 += (x.at(in, ch, i, j) - mean) * (x.at(in, ch, i, j) - mean);
      var = s2 / m;
    }
    for (Index in = 0; in < n; ++in)
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j)
          y.at(in, ch, i, j) = gamma[ch] * (x.at(in, ch, i, j) - mean) / std::sqrt(var + eps) + beta[ch];
  }
  return y;
}

inline TensorD relu(TensorD x) {
  for (Index i = 0; i < x.numel(); ++i) x[i] = x[i] > 0 ? x[i] : 0.0;
  return x;
}

inline TensorD add(TensorD a, const TensorD& b) {
  for (Index i = 0; i < a.numel(); ++i) a[i] += b[i];
  return a;
}

inline TensorD value_of(const ParamF* p) { return p->value->cast<double>(); }

inline TensorD conv(const TensorD& x, const Conv2d& layer) {
  const TensorD w = value_of(layer.weight);
  if (layer.bias != nullptr) {
    const TensorD b = value_of(layer.bias);
    return conv(x, w, &b, layer.options.stride, layer.options.padding);
  }
  return conv(x, w, nullptr, layer.options.stride, layer.options.padding);
}

inline TensorD batch_norm(const TensorD& x, const BatchNorm2d& bn, bool train) {
  return batch_norm(x, value_of(bn.gamma), value_of(bn.beta), value_of(bn.running_mean), value_of(bn.running_var),
                    train, bn.epsilon);
}

/// out_i = ReLU(sum_j T_{j->i}(x_j)) written out term by term.
inline std::vector<TensorD> fuse(const FusionUnit& unit, const std::vector<TensorD>& streams, bool train) {
  std::vector<TensorD> out;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    TensorD acc = streams[i];
    for (std::size_t j = 0; j < streams.size(); ++j) {
      if (j == i) continue;
      const StreamTransform& t = unit.transform(j, i);
      TensorD term;
      if (j > i) {
        term = resize(conv(streams[j], t.up), streams[i].dim(2), streams[i].dim(3));
      } else {
        term = streams[j];
        for (std::size_t k = 0; k < t.down.size(); ++k) {
          term = conv(term, t.down[k].conv);
          if (k + 1 < t.down.size()) term = relu(batch_norm(term, t.down[k].norm, train));
        }
      }
      acc = add(acc, term);
    }
    out.push_back(relu(acc));
  }
  return out;
}

/// Lowest stream 1x1-convolved, resized onto its neighbour, added, dropped.
inline std::vector<TensorD> merge_drop_lowest(const MergeUnit& unit, const std::vector<TensorD>& streams) {
  std::vector<TensorD> out(streams.begin(), streams.end() - 1);
  TensorD& target = out.back();
  target = add(target, resize(conv(streams.back(), unit.conv()), target.dim(2), target.dim(3)));
  return out;
}

}  // namespace rhrn::oracle
