#include "rhrn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace rhrn {
namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
Tape<Scalar>* common_tape(std::initializer_list<const Var<Scalar>*> vars) {
  Tape<Scalar>* tape = nullptr;
  for (const Var<Scalar>* v : vars) {
    if (v == nullptr || !v->defined() || !v->requires_grad()) continue;
    if (tape != nullptr && tape != v->tape())
      throw ValidationError("operands live on different tapes");
    tape = v->tape();
  }
  return tape;
}

template <typename Scalar>
NodeId node_of(const Var<Scalar>& v) {
  return v.defined() && v.requires_grad() ? v.node() : kNoNode;
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* op) {
  if (!t.all_finite()) throw NumericFailure(std::string(op) + ": non-finite values");
}

void require_rank(const Shape& s, int rank, const char* op, const char* what) {
  if (s.rank() != rank) {
    std::ostringstream msg;
    msg << op << ": " << what << " must have rank " << rank << ", got " << s.str();
    throw ValidationError(msg.str());
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ValidationError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// ---------------------------------------------------------------- conv2d

struct ConvGeometry {
  Index n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, padding;
  Index patch() const { return cin * kh * kw; }
  Index pixels() const { return ho * wo; }
};

// cols is (cin*kh*kw) x (n*ho*wo), row-major; column block n*P..(n+1)*P holds image n.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* cols) {
  const Index P = g.pixels();
  const Index ld = g.n * P;
  for (Index n = 0; n < g.n; ++n) {
    for (Index c = 0; c < g.cin; ++c) {
      const Scalar* plane = x + (n * g.cin + c) * g.h * g.w;
      for (Index ky = 0; ky < g.kh; ++ky) {
        for (Index kx = 0; kx < g.kw; ++kx) {
          Scalar* row = cols + ((c * g.kh + ky) * g.kw + kx) * ld + n * P;
          for (Index oy = 0; oy < g.ho; ++oy) {
            const Index iy = oy * g.stride - g.padding + ky;
            Scalar* out = row + oy * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(out, out + g.wo, Scalar(0));
              continue;
            }
            const Scalar* src = plane + iy * g.w;
            for (Index ox = 0; ox < g.wo; ++ox) {
              const Index ix = ox * g.stride - g.padding + kx;
              out[ox] = (ix >= 0 && ix < g.w) ? src[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* cols, const ConvGeometry& g, Scalar* dx) {
  const Index P = g.pixels();
  const Index ld = g.n * P;
  for (Index n = 0; n < g.n; ++n) {
    for (Index c = 0; c < g.cin; ++c) {
      Scalar* plane = dx + (n * g.cin + c) * g.h * g.w;
      for (Index ky = 0; ky < g.kh; ++ky) {
        for (Index kx = 0; kx < g.kw; ++kx) {
          const Scalar* row = cols + ((c * g.kh + ky) * g.kw + kx) * ld + n * P;
          for (Index oy = 0; oy < g.ho; ++oy) {
            const Index iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.h) continue;
            Scalar* dst = plane + iy * g.w;
            const Scalar* in = row + oy * g.wo;
            for (Index ox = 0; ox < g.wo; ++ox) {
              const Index ix = ox * g.stride - g.padding + kx;
              if (ix >= 0 && ix < g.w) dst[ix] += in[ox];
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
RowMatrix<Scalar> unfold(const Tensor<Scalar>& x, const ConvGeometry& g) {
  RowMatrix<Scalar> cols(g.patch(), g.n * g.pixels());
  im2col(x.data(), g, cols.data());
  return cols;
}

// ---------------------------------------------------------------- resize

struct Taps {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

Taps half_pixel_taps(Index in, Index out) {
  Taps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<Index>(std::floor(src));
    const auto k = static_cast<std::size_t>(i);
    t.lo[k] = lo;
    t.hi[k] = std::min(lo + 1, in - 1);
    t.frac[k] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   Conv2dOptions options) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  require_rank(xs, 4, "conv2d", "input");
  require_rank(ws, 4, "conv2d", "weight");
  if (xs[1] != ws[1]) {
    throw ValidationError("conv2d: input " + xs.str() + " and weight " + ws.str() +
                          " disagree on input channels");
  }
  if (ws[2] % 2 == 0 || ws[3] % 2 == 0)
    throw ValidationError("conv2d: kernel must be odd-sized, weight " + ws.str());
  if (options.stride < 1 || options.padding < 0)
    throw ValidationError("conv2d: stride must be >= 1 and padding >= 0");
  if (xs[2] + 2 * options.padding < ws[2] || xs[3] + 2 * options.padding < ws[3]) {
    throw ValidationError("conv2d: input " + xs.str() + " too small for weight " + ws.str());
  }
  if (bias.defined() && bias.shape() != Shape{ws[0]}) {
    throw ValidationError("conv2d: bias " + bias.shape().str() + " does not match weight " +
                          ws.str());
  }
  require_finite(input.value(), "conv2d input");

  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3],
                 conv_output_extent(xs[2], ws[2], options.stride, options.padding),
                 conv_output_extent(xs[3], ws[3], options.stride, options.padding),
                 options.stride, options.padding};
  const Index P = g.pixels();

  RowMatrix<Scalar> cols = unfold(input.value(), g);
  auto wmat = weight.value().matrix(g.cout, g.patch());
  RowMatrix<Scalar> out(g.cout, g.n * P);
  out.noalias() = wmat * cols;

  Tensor<Scalar> y(Shape{g.n, g.cout, g.ho, g.wo});
  for (Index n = 0; n < g.n; ++n) {
    auto block = y.matrix(g.cout, P, n * g.cout * P);
    block = out.middleCols(n * P, P);
    if (bias.defined()) {
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> b(bias.value().data(), g.cout);
      block.colwise() += b;
    }
  }
  require_finite(y, "conv2d");

  Tape<Scalar>* tape = common_tape({&input, &weight, &bias});
  if (tape == nullptr) return Var<Scalar>(std::move(y));

  auto xv = input.shared();
  auto wv = weight.shared();
  const NodeId xid = node_of(input), wid = node_of(weight), bid = node_of(bias);
  return tape->record(
      std::move(y), {xid, wid, bid},
      [xv, wv, g, xid, wid, bid](const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        const Index P = g.pixels();
        RowMatrix<Scalar> G(g.cout, g.n * P);
        for (Index n = 0; n < g.n; ++n) G.middleCols(n * P, P) = gy.matrix(g.cout, P, n * g.cout * P);
        if (bid != kNoNode) {
          Tensor<Scalar> db(Shape{g.cout});
          Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(db.data(), g.cout) = G.rowwise().sum();
          t.accumulate(bid, std::move(db));
        }
        if (wid != kNoNode) {
          RowMatrix<Scalar> cols = unfold(*xv, g);
          Tensor<Scalar> dw(wv->shape());
          dw.matrix(g.cout, g.patch()).noalias() = G * cols.transpose();
          t.accumulate(wid, std::move(dw));
        }
        if (xid != kNoNode) {
          RowMatrix<Scalar> dcols(g.patch(), g.n * P);
          dcols.noalias() = wv->matrix(g.cout, g.patch()).transpose() * G;
          Tensor<Scalar> dx(xv->shape());
          col2im(dcols.data(), g, dx.data());
          t.accumulate(xid, std::move(dx));
        }
      },
      "conv2d");
}

template <typename Scalar>
Var<Scalar> bilinear_resize(const Var<Scalar>& input, Index out_h, Index out_w) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "bilinear_resize", "input");
  if (out_h < 1 || out_w < 1) throw ValidationError("bilinear_resize: target size must be positive");
  const Index N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (H == out_h && W == out_w) {
    // The half-pixel rule maps every output pixel onto its own source pixel.
    if (!input.requires_grad()) return Var<Scalar>(input.shared());
    const NodeId xid = input.node();
    return input.tape()->record(
        input.value(), {xid},
        [xid](const Tensor<Scalar>& gy, Tape<Scalar>& t) { t.accumulate(xid, gy); },
        "bilinear_resize");
  }

  const Taps ty = half_pixel_taps(H, out_h);
  const Taps tx = half_pixel_taps(W, out_w);
  Tensor<Scalar> y(Shape{N, C, out_h, out_w});
  const Scalar* x = input.value().data();
  Scalar* out = y.data();
  for (Index plane = 0; plane < N * C; ++plane) {
    const Scalar* src = x + plane * H * W;
    Scalar* dst = out + plane * out_h * out_w;
    for (Index i = 0; i < out_h; ++i) {
      const auto ki = static_cast<std::size_t>(i);
      const Scalar fy = static_cast<Scalar>(ty.frac[ki]);
      const Scalar* r0 = src + ty.lo[ki] * W;
      const Scalar* r1 = src + ty.hi[ki] * W;
      for (Index j = 0; j < out_w; ++j) {
        const auto kj = static_cast<std::size_t>(j);
        const Scalar fx = static_cast<Scalar>(tx.frac[kj]);
        const Index x0 = tx.lo[kj], x1 = tx.hi[kj];
        const Scalar top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const Scalar bottom = r1[x0] + fx * (r1[x1] - r1[x0]);
        dst[i * out_w + j] = top + fy * (bottom - top);
      }
    }
  }
  require_finite(y, "bilinear_resize");
  if (!input.requires_grad()) return Var<Scalar>(std::move(y));

  const NodeId xid = input.node();
  return input.tape()->record(
      std::move(y), {xid},
      [xs, ty, tx, out_h, out_w, xid](const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        const Index H = xs[2], W = xs[3];
        Tensor<Scalar> dx(xs);
        for (Index plane = 0; plane < xs[0] * xs[1]; ++plane) {
          const Scalar* g = gy.data() + plane * out_h * out_w;
          Scalar* d = dx.data() + plane * H * W;
          for (Index i = 0; i < out_h; ++i) {
            const auto ki = static_cast<std::size_t>(i);
            const Scalar fy = static_cast<Scalar>(ty.frac[ki]);
            Scalar* r0 = d + ty.lo[ki] * W;
            Scalar* r1 = d + ty.hi[ki] * W;
            for (Index j = 0; j < out_w; ++j) {
              const auto kj = static_cast<std::size_t>(j);
              const Scalar fx = static_cast<Scalar>(tx.frac[kj]);
              const Scalar v = g[i * out_w + j];
              const Index x0 = tx.lo[kj], x1 = tx.hi[kj];
              r0[x0] += v * (1 - fy) * (1 - fx);
              r0[x1] += v * (1 - fy) * fx;
              r1[x0] += v * fy * (1 - fx);
              r1[x1] += v * fy * fx;
            }
          }
        }
        t.accumulate(xid, std::move(dx));
      },
      "bilinear_resize");
}

template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& input, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var,
                       BatchNormOptions options) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "batch_norm", "input");
  const Index N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  const Shape cs{C};
  for (const Shape* s : {&gamma.shape(), &beta.shape(), &running_mean.shape(), &running_var.shape()})
    require_same(*s, cs, "batch_norm");
  if (!(options.epsilon > 0)) throw ValidationError("batch_norm: epsilon must be positive");
  const Index M = N * HW;
  if (options.mode == NormMode::Train && M < 1)
    throw ValidationError("batch_norm: empty batch*spatial extent in train mode");

  const Scalar eps = static_cast<Scalar>(options.epsilon);
  const Tensor<Scalar>& x = input.value();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mean(C), inv_std(C);
  if (options.mode == NormMode::Train) {
    // Statistics accumulate in double whatever the storage type.
    for (Index c = 0; c < C; ++c) {
      double s = 0;
      for (Index n = 0; n < N; ++n) s += x.array().segment((n * C + c) * HW, HW).template cast<double>().sum();
      const double mu = s / static_cast<double>(M);
      double ss = 0;
      for (Index n = 0; n < N; ++n)
        ss += (x.array().segment((n * C + c) * HW, HW).template cast<double>() - mu).square().sum();
      const double var = ss / static_cast<double>(M);
      mean[c] = static_cast<Scalar>(mu);
      inv_std[c] = static_cast<Scalar>(1.0 / std::sqrt(var + options.epsilon));
      if (options.update_running) {
        const double m = options.momentum;
        const double unbiased = M > 1 ? ss / static_cast<double>(M - 1) : var;
        running_mean[c] = static_cast<Scalar>((1 - m) * running_mean[c] + m * mu);
        running_var[c] = static_cast<Scalar>((1 - m) * running_var[c] + m * unbiased);
      }
    }
  } else {
    mean = running_mean.array();
    inv_std = (running_var.array() + eps).rsqrt();
  }

  Tensor<Scalar> xhat(xs);
  Tensor<Scalar> y(xs);
  for (Index n = 0; n < N; ++n) {
    for (Index c = 0; c < C; ++c) {
      const Index off = (n * C + c) * HW;
      xhat.array().segment(off, HW) = (x.array().segment(off, HW) - mean[c]) * inv_std[c];
      y.array().segment(off, HW) = xhat.array().segment(off, HW) * gamma.value()[c] + beta.value()[c];
    }
  }
  require_finite(y, "batch_norm");

  Tape<Scalar>* tape = common_tape({&input, &gamma, &beta});
  if (tape == nullptr) return Var<Scalar>(std::move(y));

  const NodeId xid = node_of(input), gid = node_of(gamma), bid = node_of(beta);
  auto gv = gamma.shared();
  const bool train = options.mode == NormMode::Train;
  return tape->record(
      std::move(y), {xid, gid, bid},
      [xhat = std::move(xhat), gv, inv_std, train, N, C, HW, M, xid, gid, bid](
          const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        Eigen::ArrayXd acc_dy = Eigen::ArrayXd::Zero(C), acc_dy_xhat = Eigen::ArrayXd::Zero(C);
        for (Index n = 0; n < N; ++n) {
          for (Index c = 0; c < C; ++c) {
            const Index off = (n * C + c) * HW;
            acc_dy[c] += gy.array().segment(off, HW).template cast<double>().sum();
            acc_dy_xhat[c] +=
                (gy.array().segment(off, HW).template cast<double>() * xhat.array().segment(off, HW).template cast<double>())
                    .sum();
          }
        }
        const Eigen::Array<Scalar, Eigen::Dynamic, 1> sum_dy = acc_dy.cast<Scalar>();
        const Eigen::Array<Scalar, Eigen::Dynamic, 1> sum_dy_xhat = acc_dy_xhat.cast<Scalar>();
        if (gid != kNoNode) t.accumulate(gid, Tensor<Scalar>(Shape{C}, sum_dy_xhat));
        if (bid != kNoNode) t.accumulate(bid, Tensor<Scalar>(Shape{C}, sum_dy));
        if (xid == kNoNode) return;
        Tensor<Scalar> dx(gy.shape());
        const Scalar inv_m = Scalar(1) / static_cast<Scalar>(M);
        for (Index n = 0; n < N; ++n) {
          for (Index c = 0; c < C; ++c) {
            const Index off = (n * C + c) * HW;
            const Scalar k = (*gv)[c] * inv_std[c];
            if (train) {
              dx.array().segment(off, HW) =
                  k * (gy.array().segment(off, HW) - sum_dy[c] * inv_m -
                       xhat.array().segment(off, HW) * (sum_dy_xhat[c] * inv_m));
            } else {
              dx.array().segment(off, HW) = k * gy.array().segment(off, HW);
            }
          }
        }
        t.accumulate(xid, std::move(dx));
      },
      "batch_norm");
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& input) {
  Tensor<Scalar> y(input.shape(), input.value().array().max(Scalar(0)));
  require_finite(y, "relu");
  if (!input.requires_grad()) return Var<Scalar>(std::move(y));
  auto xv = input.shared();
  const NodeId xid = input.node();
  return input.tape()->record(
      std::move(y), {xid},
      [xv, xid](const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        // Subgradient at zero is zero.
        Tensor<Scalar> dx(gy.shape(), (xv->array() > Scalar(0)).select(gy.array(), Scalar(0)));
        t.accumulate(xid, std::move(dx));
      },
      "relu");
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<Scalar> y(a.shape(), a.value().array() + b.value().array());
  require_finite(y, "add");
  Tape<Scalar>* tape = common_tape({&a, &b});
  if (tape == nullptr) return Var<Scalar>(std::move(y));
  const NodeId aid = node_of(a), bid = node_of(b);
  return tape->record(
      std::move(y), {aid, bid},
      [aid, bid](const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        if (aid != kNoNode) t.accumulate(aid, gy);
        if (bid != kNoNode) t.accumulate(bid, gy);
      },
      "add");
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<Scalar> y(a.shape(), a.value().array() * b.value().array());
  require_finite(y, "mul");
  Tape<Scalar>* tape = common_tape({&a, &b});
  if (tape == nullptr) return Var<Scalar>(std::move(y));
  const NodeId aid = node_of(a), bid = node_of(b);
  auto av = a.shared(), bv = b.shared();
  return tape->record(
      std::move(y), {aid, bid},
      [av, bv, aid, bid](const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        if (aid != kNoNode) t.accumulate(aid, Tensor<Scalar>(gy.shape(), gy.array() * bv->array()));
        if (bid != kNoNode) t.accumulate(bid, Tensor<Scalar>(gy.shape(), gy.array() * av->array()));
      },
      "mul");
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Tensor<Scalar> y(a.shape(), a.value().array() * factor);
  require_finite(y, "scale");
  if (!a.requires_grad()) return Var<Scalar>(std::move(y));
  const NodeId aid = a.node();
  return a.tape()->record(
      std::move(y), {aid},
      [aid, factor](const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        t.accumulate(aid, Tensor<Scalar>(gy.shape(), gy.array() * factor));
      },
      "scale");
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Tensor<Scalar> y = Tensor<Scalar>::constant(Shape{1}, a.value().array().sum());
  require_finite(y, "sum");
  if (!a.requires_grad()) return Var<Scalar>(std::move(y));
  const NodeId aid = a.node();
  const Shape xs = a.shape();
  return a.tape()->record(
      std::move(y), {aid},
      [aid, xs](const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        t.accumulate(aid, Tensor<Scalar>::constant(xs, gy[0]));
      },
      "sum");
}

template <typename Scalar>
Var<Scalar> concat_channels(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ValidationError("concat_channels: no inputs");
  const Shape& first = parts[0].shape();
  require_rank(first, 4, "concat_channels", "input");
  Index total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require_rank(s, 4, "concat_channels", "input");
    if (s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw ValidationError("concat_channels: spatial mismatch " + first.str() + " vs " + s.str());
    }
    total += s[1];
  }
  if (parts.size() == 1) return parts[0];

  const Index N = first[0], HW = first[2] * first[3];
  Tensor<Scalar> y(Shape{N, total, first[2], first[3]});
  std::vector<Index> offsets;
  std::vector<NodeId> ids;
  Tape<Scalar>* tape = nullptr;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index c = p.shape()[1];
    for (Index n = 0; n < N; ++n) {
      y.array().segment((n * total + offset) * HW, c * HW) = p.value().array().segment(n * c * HW, c * HW);
    }
    offsets.push_back(offset);
    ids.push_back(node_of(p));
    if (p.requires_grad()) {
      if (tape != nullptr && tape != p.tape()) throw ValidationError("operands live on different tapes");
      tape = p.tape();
    }
    offset += c;
  }
  if (tape == nullptr) return Var<Scalar>(std::move(y));

  std::vector<Shape> shapes;
  for (const auto& p : parts) shapes.push_back(p.shape());
  return tape->record(
      std::move(y), ids,
      [shapes, offsets, ids, total, N, HW](const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        for (std::size_t i = 0; i < shapes.size(); ++i) {
          if (ids[i] == kNoNode) continue;
          const Index c = shapes[i][1];
          Tensor<Scalar> d(shapes[i]);
          for (Index n = 0; n < N; ++n) {
            d.array().segment(n * c * HW, c * HW) = gy.array().segment((n * total + offsets[i]) * HW, c * HW);
          }
          t.accumulate(ids[i], std::move(d));
        }
      },
      "concat_channels");
}

template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& input, Index offset, Index count) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "slice_channels", "input");
  if (offset < 0 || count < 1 || offset + count > xs[1]) {
    throw ValidationError("slice_channels: range [" + std::to_string(offset) + ", " +
                          std::to_string(offset + count) + ") outside " + xs.str());
  }
  const Index N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor<Scalar> y(Shape{N, count, xs[2], xs[3]});
  for (Index n = 0; n < N; ++n) {
    y.array().segment(n * count * HW, count * HW) = input.value().array().segment((n * C + offset) * HW, count * HW);
  }
  if (!input.requires_grad()) return Var<Scalar>(std::move(y));
  const NodeId xid = input.node();
  return input.tape()->record(
      std::move(y), {xid},
      [xs, offset, count, xid](const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        const Index N = xs[0], C = xs[1], HW = xs[2] * xs[3];
        Tensor<Scalar> dx(xs);
        for (Index n = 0; n < N; ++n) {
          dx.array().segment((n * C + offset) * HW, count * HW) = gy.array().segment(n * count * HW, count * HW);
        }
        t.accumulate(xid, std::move(dx));
      },
      "slice_channels");
}

template <typename Scalar>
Var<Scalar> softmax_cross_entropy_mean(const Var<Scalar>& logits, const LabelMap& labels,
                                       int ignore_index) {
  const Shape& ls = logits.shape();
  require_rank(ls, 4, "softmax_cross_entropy_mean", "logits");
  const Index N = ls[0], K = ls[1], H = ls[2], W = ls[3], HW = H * W;
  if (labels.batch != N || labels.height != H || labels.width != W) {
    throw ValidationError("softmax_cross_entropy_mean: labels (" + std::to_string(labels.batch) + "," +
                          std::to_string(labels.height) + "," + std::to_string(labels.width) +
                          ") do not match logits " + ls.str());
  }
  const Tensor<Scalar>& z = logits.value();
  require_finite(z, "softmax_cross_entropy_mean logits");

  // Softmax probabilities are kept for the backward pass.
  Tensor<Scalar> prob(ls);
  double total = 0;
  Index counted = 0;
  for (Index n = 0; n < N; ++n) {
    for (Index p = 0; p < HW; ++p) {
      const std::int32_t label = labels.values[static_cast<std::size_t>(n * HW + p)];
      if (label == ignore_index) continue;
      if (label < 0 || label >= K) {
        throw ValidationError("softmax_cross_entropy_mean: label " + std::to_string(label) +
                              " outside [0," + std::to_string(K) + ") at pixel " + std::to_string(p) +
                              " of image " + std::to_string(n));
      }
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index k = 0; k < K; ++k) mx = std::max(mx, z[(n * K + k) * HW + p]);
      Scalar se = 0;
      for (Index k = 0; k < K; ++k) {
        const Scalar e = std::exp(z[(n * K + k) * HW + p] - mx);
        prob[(n * K + k) * HW + p] = e;
        se += e;
      }
      for (Index k = 0; k < K; ++k) prob[(n * K + k) * HW + p] /= se;
      const Scalar lse = mx + std::log(se);
      total += static_cast<double>(lse - z[(n * K + label) * HW + p]);
      ++counted;
    }
  }
  if (counted == 0) throw ValidationError("softmax_cross_entropy_mean: every pixel is ignored");
  Tensor<Scalar> y = Tensor<Scalar>::constant(Shape{1}, static_cast<Scalar>(total / static_cast<double>(counted)));
  require_finite(y, "softmax_cross_entropy_mean");
  if (!logits.requires_grad()) return Var<Scalar>(std::move(y));

  const NodeId zid = logits.node();
  return logits.tape()->record(
      std::move(y), {zid},
      [prob = std::move(prob), labels, ignore_index, counted, N, K, HW, zid](
          const Tensor<Scalar>& gy, Tape<Scalar>& t) {
        Tensor<Scalar> dz(prob.shape());
        const Scalar k_scale = gy[0] / static_cast<Scalar>(counted);
        for (Index n = 0; n < N; ++n) {
          for (Index p = 0; p < HW; ++p) {
            const std::int32_t label = labels.values[static_cast<std::size_t>(n * HW + p)];
            if (label == ignore_index) continue;
            for (Index k = 0; k < K; ++k) {
              const Index i = (n * K + k) * HW + p;
              dz[i] = k_scale * (prob[i] - (k == label ? Scalar(1) : Scalar(0)));
            }
          }
        }
        t.accumulate(zid, std::move(dz));
      },
      "softmax_cross_entropy_mean");
}

template <typename Scalar>
LabelMap argmax_channels(const Tensor<Scalar>& logits) {
  const Shape& ls = logits.shape();
  require_rank(ls, 4, "argmax_channels", "logits");
  const Index N = ls[0], K = ls[1], H = ls[2], W = ls[3], HW = H * W;
  LabelMap out(N, H, W);
  for (Index n = 0; n < N; ++n) {
    for (Index p = 0; p < HW; ++p) {
      Index best = 0;
      Scalar best_v = logits[n * K * HW + p];
      for (Index k = 1; k < K; ++k) {
        const Scalar v = logits[(n * K + k) * HW + p];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out.values[static_cast<std::size_t>(n * HW + p)] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

#define RHRN_INSTANTIATE_OPS(S)                                                                  \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, Conv2dOptions);         \
  template Var<S> bilinear_resize<S>(const Var<S>&, Index, Index);                               \
  template Var<S> batch_norm<S>(const Var<S>&, const Var<S>&, const Var<S>&, Tensor<S>&,         \
                                Tensor<S>&, BatchNormOptions);                                   \
  template Var<S> relu<S>(const Var<S>&);                                                        \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                                          \
  template Var<S> mul<S>(const Var<S>&, const Var<S>&);                                          \
  template Var<S> scale<S>(const Var<S>&, S);                                                    \
  template Var<S> sum<S>(const Var<S>&);                                                         \
  template Var<S> concat_channels<S>(std::span<const Var<S>>);                                   \
  template Var<S> slice_channels<S>(const Var<S>&, Index, Index);                                \
  template Var<S> softmax_cross_entropy_mean<S>(const Var<S>&, const LabelMap&, int);            \
  template LabelMap argmax_channels<S>(const Tensor<S>&);

RHRN_INSTANTIATE_OPS(float)
RHRN_INSTANTIATE_OPS(double)

#undef RHRN_INSTANTIATE_OPS

}  // namespace rhrn
