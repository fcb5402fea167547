#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rhrn/errors.hpp"

namespace rhrn {

using Index = std::int64_t;

/// Dimension list of a tensor, rank 1 to 4, canonical order N,C,H,W.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims);
  explicit Shape(std::vector<Index> dims);

  int rank() const { return static_cast<int>(dims_.size()); }
  Index operator[](int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  Index numel() const;
  const std::vector<Index>& dims() const { return dims_; }

  bool operator==(const Shape& other) const = default;

  std::string str() const;

 private:
  std::vector<Index> dims_;
};

/// Dense row-major tensor. Value semantics; copying copies the buffer.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(shape_.numel())) {}
  Tensor(Shape shape, Array data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar value);
  static Tensor from(Shape shape, std::initializer_list<Scalar> values);

  const Shape& shape() const { return shape_; }
  Index numel() const { return shape_.numel(); }
  Index dim(int axis) const { return shape_[axis]; }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// View of the buffer as a rows x cols row-major matrix starting at offset.
  MatrixMap matrix(Index rows, Index cols, Index offset = 0) {
    return MatrixMap(data_.data() + offset, rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols, Index offset = 0) const {
    return ConstMatrixMap(data_.data() + offset, rows, cols);
  }

  bool all_finite() const { return data_.allFinite(); }

  Tensor reshaped(Shape shape) const;

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>());
  }

 private:
  Shape shape_;
  Array data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Integer class-id map of shape (N,H,W).
struct LabelMap {
  Index batch = 0;
  Index height = 0;
  Index width = 0;
  std::vector<std::int32_t> values;

  LabelMap() = default;
  LabelMap(Index n, Index h, Index w, std::int32_t fill = 0)
      : batch(n), height(h), width(w), values(static_cast<std::size_t>(n * h * w), fill) {}

  Index size() const { return batch * height * width; }
  std::int32_t& at(Index n, Index y, Index x) {
    return values[static_cast<std::size_t>((n * height + y) * width + x)];
  }
  std::int32_t at(Index n, Index y, Index x) const {
    return values[static_cast<std::size_t>((n * height + y) * width + x)];
  }
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace rhrn
