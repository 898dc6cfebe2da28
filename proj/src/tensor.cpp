#include "crossalign/tensor.hpp"

#include <cmath>
#include <sstream>

namespace crossalign {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (Index d : shape) {
    if (d <= 0) {
      throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)) {
  check_shape(shape_);
  data_ = Array::Zero(numel(shape_));
  set_requires_grad(requires_grad);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (numel(shape_) != data_.size()) {
    throw ShapeError("shape " + to_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
  set_requires_grad(requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, std::initializer_list<Scalar> values) {
  Array data(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) {
    data[i++] = v;
  }
  return Tensor(std::move(shape), std::move(data));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::filled(Shape shape, Scalar value) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, value));
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " + to_string(shape_));
  }
  return data_[0];
}

template <typename Scalar>
typename Tensor<Scalar>::MatrixMap Tensor<Scalar>::matrix(Index rows, Index cols) {
  if (rows * cols != size()) {
    throw ShapeError("cannot view " + to_string(shape_) + " as " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  return MatrixMap(data_.data(), rows, cols);
}

template <typename Scalar>
typename Tensor<Scalar>::ConstMatrixMap Tensor<Scalar>::matrix(Index rows, Index cols) const {
  if (rows * cols != size()) {
    throw ShapeError("cannot view " + to_string(shape_) + " as " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  return ConstMatrixMap(data_.data(), rows, cols);
}

template <typename Scalar>
void Tensor<Scalar>::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    if (grad_.size() != data_.size()) {
      grad_ = Array::Zero(data_.size());
    }
  } else {
    grad_.resize(0);
  }
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  if (requires_grad_) {
    grad_.setZero();
  }
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace crossalign
