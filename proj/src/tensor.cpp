#include "rhrn/tensor.hpp"

#include <sstream>

namespace rhrn {

Shape::Shape(std::initializer_list<Index> dims) : Shape(std::vector<Index>(dims)) {}

Shape::Shape(std::vector<Index> dims) : dims_(std::move(dims)) {
  if (dims_.empty() || dims_.size() > 4) {
    throw ValidationError("tensor rank must be 1..4, got " + std::to_string(dims_.size()));
  }
  for (Index d : dims_) {
    if (d <= 0) throw ValidationError("tensor dimensions must be positive: " + str());
  }
}

Index Shape::numel() const {
  if (dims_.empty()) return 0;
  Index n = 1;
  for (Index d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out << ',';
    out << dims_[i];
  }
  out << ')';
  return out.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ValidationError("buffer of " + std::to_string(data_.size()) +
                          " elements does not fit shape " + shape_.str());
  }
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, std::initializer_list<Scalar> values) {
  Array data(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) data[i++] = v;
  return Tensor(std::move(shape), std::move(data));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace rhrn
