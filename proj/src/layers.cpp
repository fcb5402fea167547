#include "rhrn/layers.hpp"

#include <cmath>

namespace rhrn {

VarF bind(const ParamF& p, TapeF* tape) {
  if (tape != nullptr) return tape->watch(p);
  return VarF(std::shared_ptr<const TensorF>(p.value));
}

Conv2d Conv2d::create(ParamTableF& table, const std::string& name, Index in_channels,
                      Index out_channels, Index kernel, int stride, bool with_bias, bool frozen,
                      Rng& rng, double gain) {
  Conv2d conv;
  conv.weight = &table.create(name + ".weight", Shape{out_channels, in_channels, kernel, kernel},
                              ParamKind::Weight, frozen);
  const double fan_in = static_cast<double>(in_channels * kernel * kernel);
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
  if (gain > 0)
    for (Index i = 0; i < conv.weight->value->numel(); ++i) (*conv.weight->value)[i] = static_cast<float>(dist(rng));
  if (with_bias) conv.bias = &table.create(name + ".bias", Shape{out_channels}, ParamKind::Weight, frozen);
  conv.options = Conv2dOptions{stride, static_cast<int>(kernel / 2)};
  return conv;
}

VarF Conv2d::operator()(const VarF& x, const Pass& pass) const {
  return conv2d(x, bind(*weight, pass.tape), bias ? bind(*bias, pass.tape) : VarF(), options);
}

BatchNorm2d BatchNorm2d::create(ParamTableF& table, const std::string& name, Index channels, bool frozen) {
  BatchNorm2d bn;
  bn.gamma = &table.create(name + ".gamma", Shape{channels}, ParamKind::Weight, frozen);
  bn.beta = &table.create(name + ".beta", Shape{channels}, ParamKind::Weight, frozen);
  bn.running_mean = &table.create(name + ".running_mean", Shape{channels}, ParamKind::Buffer, frozen);
  bn.running_var = &table.create(name + ".running_var", Shape{channels}, ParamKind::Buffer, frozen);
  bn.gamma->value->array().setOnes();
  bn.running_var->value->array().setOnes();
  return bn;
}

VarF BatchNorm2d::operator()(const VarF& x, NormMode mode, TapeF* tape) const {
  BatchNormOptions options{mode, momentum, epsilon, !running_mean->frozen && !running_var->frozen};
  return batch_norm(x, bind(*gamma, tape), bind(*beta, tape), *running_mean->value, *running_var->value,
                    options);
}

BasicBlock BasicBlock::create(ParamTableF& table, const std::string& name, Index in_channels,
                              Index out_channels, int stride, bool frozen, Rng& rng, bool zero_residual) {
  BasicBlock b;
  b.conv1 = Conv2d::create(table, name + ".conv1", in_channels, out_channels, 3, stride, false, frozen, rng);
  b.bn1 = BatchNorm2d::create(table, name + ".bn1", out_channels, frozen);
  b.conv2 = Conv2d::create(table, name + ".conv2", out_channels, out_channels, 3, 1, false, frozen, rng);
  b.bn2 = BatchNorm2d::create(table, name + ".bn2", out_channels, frozen);
  if (zero_residual) b.bn2.gamma->value->array().setZero();
  if (stride != 1 || in_channels != out_channels) {
    b.has_projection = true;
    b.projection = Conv2d::create(table, name + ".downsample.conv", in_channels, out_channels, 1, stride,
                                  false, frozen, rng);
    b.projection_bn = BatchNorm2d::create(table, name + ".downsample.bn", out_channels, frozen);
  }
  return b;
}

VarF BasicBlock::operator()(const VarF& x, NormMode mode, TapeF* tape) const {
  const Pass pass{tape, mode};
  VarF h = relu(bn1(conv1(x, pass), mode, tape));
  h = bn2(conv2(h, pass), mode, tape);
  VarF skip = has_projection ? projection_bn(projection(x, pass), mode, tape) : x;
  return relu(add(h, skip));
}

BottleneckBlock BottleneckBlock::create(ParamTableF& table, const std::string& name, Index in_channels,
                                        Index out_channels, int stride, bool frozen, Rng& rng) {
  const Index mid = out_channels / 4;
  BottleneckBlock b;
  b.conv1 = Conv2d::create(table, name + ".conv1", in_channels, mid, 1, 1, false, frozen, rng);
  b.bn1 = BatchNorm2d::create(table, name + ".bn1", mid, frozen);
  b.conv2 = Conv2d::create(table, name + ".conv2", mid, mid, 3, stride, false, frozen, rng);
  b.bn2 = BatchNorm2d::create(table, name + ".bn2", mid, frozen);
  b.conv3 = Conv2d::create(table, name + ".conv3", mid, out_channels, 1, 1, false, frozen, rng);
  b.bn3 = BatchNorm2d::create(table, name + ".bn3", out_channels, frozen);
  if (stride != 1 || in_channels != out_channels) {
    b.has_projection = true;
    b.projection = Conv2d::create(table, name + ".downsample.conv", in_channels, out_channels, 1, stride,
                                  false, frozen, rng);
    b.projection_bn = BatchNorm2d::create(table, name + ".downsample.bn", out_channels, frozen);
  }
  return b;
}

VarF BottleneckBlock::operator()(const VarF& x, NormMode mode, TapeF* tape) const {
  const Pass pass{tape, mode};
  VarF h = relu(bn1(conv1(x, pass), mode, tape));
  h = relu(bn2(conv2(h, pass), mode, tape));
  h = bn3(conv3(h, pass), mode, tape);
  VarF skip = has_projection ? projection_bn(projection(x, pass), mode, tape) : x;
  return relu(add(h, skip));
}

}  // namespace rhrn
