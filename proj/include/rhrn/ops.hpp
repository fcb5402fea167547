#pragma once

#include <span>
#include <vector>

#include "rhrn/tape.hpp"

namespace rhrn {

// Differentiable operators. Each one records a tape node only when at least
// one argument requires a gradient; otherwise it is a plain eager kernel.
// No broadcasting anywhere: elementwise operands must agree exactly.

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

enum class NormMode { Train, Eval };

struct BatchNormOptions {
  NormMode mode = NormMode::Eval;
  double momentum = 0.1;
  double epsilon = 1e-5;
  bool update_running = true;  // train mode only
};

/// Output spatial extent of a convolution along one axis.
constexpr Index conv_output_extent(Index in, Index kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

/// 2-D cross-correlation with zero padding. `bias` may be undefined.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   Conv2dOptions options);

/// Bilinear resampling with half-pixel centres:
/// src = (i + 0.5) * in / out - 0.5, clamped to [0, in - 1].
template <typename Scalar>
Var<Scalar> bilinear_resize(const Var<Scalar>& input, Index out_h, Index out_w);

/// Per-channel normalization over (N,H,W). Train mode uses batch statistics
/// and folds them into the running tensors with `momentum`; eval mode reads
/// the running tensors only.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& input, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var,
                       BatchNormOptions options);

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& input);

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor);

/// Sum of all elements, shape (1).
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a);

template <typename Scalar>
Var<Scalar> concat_channels(std::span<const Var<Scalar>> parts);

template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& input, Index offset, Index count);

/// Mean over non-ignored pixels of -log softmax(logits)[label].
template <typename Scalar>
Var<Scalar> softmax_cross_entropy_mean(const Var<Scalar>& logits, const LabelMap& labels,
                                       int ignore_index);

/// Per-pixel argmax over the class axis of (N,K,H,W) logits.
template <typename Scalar>
LabelMap argmax_channels(const Tensor<Scalar>& logits);

}  // namespace rhrn
