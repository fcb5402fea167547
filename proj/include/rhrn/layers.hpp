#pragma once

#include <random>
#include <string>

#include "rhrn/ops.hpp"
#include "rhrn/parameter.hpp"
#include "rhrn/tape.hpp"

namespace rhrn {

using ParamTableF = ParameterTable<float>;
using ParamF = Parameter<float>;
using VarF = Var<float>;
using TapeF = Tape<float>;
using Rng = std::mt19937_64;

/// How a forward pass runs: with or without a tape, and which normalization
/// mode trainable blocks use.
struct Pass {
  TapeF* tape = nullptr;
  NormMode mode = NormMode::Eval;
};

/// Binds a parameter for a pass: a tape node when trainable and taped,
/// otherwise a constant sharing the parameter's storage.
VarF bind(const ParamF& p, TapeF* tape);

struct Conv2d {
  ParamF* weight = nullptr;
  ParamF* bias = nullptr;
  Conv2dOptions options;

  /// Normal weights with std = sqrt(gain / fan_in), zero bias. gain 2 is He
  /// init for convs feeding a ReLU, 1 suits purely linear maps, 0 gives zero
  /// weights. Padding keeps "same" geometry for odd kernels.
  static Conv2d create(ParamTableF& table, const std::string& name, Index in_channels,
                       Index out_channels, Index kernel, int stride, bool with_bias, bool frozen,
                       Rng& rng, double gain = 2.0);

  VarF operator()(const VarF& x, const Pass& pass) const;

  Index in_channels() const { return weight->shape()[1]; }
  Index out_channels() const { return weight->shape()[0]; }
};

struct BatchNorm2d {
  ParamF* gamma = nullptr;
  ParamF* beta = nullptr;
  ParamF* running_mean = nullptr;
  ParamF* running_var = nullptr;
  double momentum = 0.1;
  double epsilon = 1e-5;

  static BatchNorm2d create(ParamTableF& table, const std::string& name, Index channels, bool frozen);

  /// Running statistics only move in train mode and only when not frozen.
  VarF operator()(const VarF& x, NormMode mode, TapeF* tape) const;
};

/// conv3x3-BN-ReLU-conv3x3-BN, identity or projected skip, ReLU.
struct BasicBlock {
  Conv2d conv1, conv2;
  BatchNorm2d bn1, bn2;
  bool has_projection = false;
  Conv2d projection;
  BatchNorm2d projection_bn;

  /// zero_residual starts bn2.gamma at 0 so the block begins as its skip path.
  static BasicBlock create(ParamTableF& table, const std::string& name, Index in_channels,
                           Index out_channels, int stride, bool frozen, Rng& rng, bool zero_residual = false);
  VarF operator()(const VarF& x, NormMode mode, TapeF* tape) const;
};

/// 1x1 reduce, 3x3 (strided), 1x1 expand; width = out / 4.
struct BottleneckBlock {
  Conv2d conv1, conv2, conv3;
  BatchNorm2d bn1, bn2, bn3;
  bool has_projection = false;
  Conv2d projection;
  BatchNorm2d projection_bn;

  static BottleneckBlock create(ParamTableF& table, const std::string& name, Index in_channels,
                                Index out_channels, int stride, bool frozen, Rng& rng);
  VarF operator()(const VarF& x, NormMode mode, TapeF* tape) const;
};

}  // namespace rhrn
