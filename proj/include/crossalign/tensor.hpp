#pragma once

#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crossalign/common.hpp"

namespace crossalign {

using Shape = std::vector<Index>;

/// Number of elements described by a shape; the empty shape is a scalar.
Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array with an optional gradient buffer.
///
/// The gradient buffer exists iff requires_grad() is true and always has the
/// same number of elements as the data.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, Array data, bool requires_grad = false);

  static Tensor from(Shape shape, std::initializer_list<Scalar> values);
  static Tensor filled(Shape shape, Scalar value);
  static Tensor scalar(Scalar value) { return filled(Shape{}, value); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Array& data() { return data_; }
  const Array& data() const { return data_; }
  Scalar* raw() { return data_.data(); }
  const Scalar* raw() const { return data_.data(); }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }
  Scalar item() const;

  /// Row-major view as a rows x cols matrix; rows * cols must equal size().
  MatrixMap matrix(Index rows, Index cols);
  ConstMatrixMap matrix(Index rows, Index cols) const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  Array& grad() { return grad_; }
  const Array& grad() const { return grad_; }
  void zero_grad();

  /// Same data under a new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  /// Bitwise equality of shape and data (gradients ignored).
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  Shape shape_;
  Array data_;
  bool requires_grad_ = false;
  Array grad_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace crossalign
