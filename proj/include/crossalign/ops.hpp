#pragma once

#include "crossalign/graph.hpp"

namespace crossalign {

// Differentiable primitives recorded on a Graph. Apart from the bias add
// inside linear/conv there is no broadcasting: operand shapes must match.

template <typename Scalar> Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> div(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> scale(Var<Scalar> x, Scalar factor);
template <typename Scalar> Var<Scalar> add_scalar(Var<Scalar> x, Scalar offset);

template <typename Scalar> Var<Scalar> exp(Var<Scalar> x);
template <typename Scalar> Var<Scalar> log(Var<Scalar> x);
template <typename Scalar> Var<Scalar> sqrt(Var<Scalar> x);
template <typename Scalar> Var<Scalar> square(Var<Scalar> x);
template <typename Scalar> Var<Scalar> sigmoid(Var<Scalar> x);
template <typename Scalar> Var<Scalar> leaky_relu(Var<Scalar> x, Scalar slope);
/// Pass-through gradient inside [lo, hi], zero outside.
template <typename Scalar> Var<Scalar> clamp(Var<Scalar> x, Scalar lo, Scalar hi);

/// Sum / mean over every element; result has the scalar shape ().
template <typename Scalar> Var<Scalar> sum(Var<Scalar> x);
template <typename Scalar> Var<Scalar> mean(Var<Scalar> x);

/// 2-D reductions. axis 1 reduces each row (result [rows]); axis 0 reduces
/// each column (result [cols]). A rank-1 input is treated as a single row
/// and reduced to shape (1).
template <typename Scalar> Var<Scalar> sum(Var<Scalar> x, int axis);
template <typename Scalar> Var<Scalar> l2_norm(Var<Scalar> x, int axis);
/// Max-shifted log-sum-exp.
template <typename Scalar> Var<Scalar> logsumexp(Var<Scalar> x, int axis);

template <typename Scalar> Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> transpose(Var<Scalar> x);
/// Diagonal of a square matrix.
template <typename Scalar> Var<Scalar> diagonal(Var<Scalar> x);
template <typename Scalar> Var<Scalar> reshape(Var<Scalar> x, Shape shape);
/// (B, ...) -> (B, prod(...)).
template <typename Scalar> Var<Scalar> flatten(Var<Scalar> x);

/// out = input * weight^T + bias; input (B,F), weight (O,F), bias (O).
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> input, Var<Scalar> weight, Var<Scalar> bias);

/// Cross-correlation; input (B,Cin,H,W), weight (Cout,Cin,k,k), bias (Cout).
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> input, Var<Scalar> weight, Var<Scalar> bias, int stride,
                   int padding);

/// Adjoint of conv2d; input (B,Cin,H,W), weight (Cin,Cout,k,k), bias (Cout).
/// Output spatial size is (H-1)*stride - 2*padding + k.
template <typename Scalar>
Var<Scalar> conv_transpose2d(Var<Scalar> input, Var<Scalar> weight, Var<Scalar> bias, int stride,
                             int padding);

template <typename Scalar>
struct BatchNormParams {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;

  explicit BatchNormParams(Index channels = 1)
      : gamma(Tensor<Scalar>::filled({channels}, Scalar(1))),
        beta(Shape{channels}),
        running_mean(Shape{channels}),
        running_var(Tensor<Scalar>::filled({channels}, Scalar(1))) {}
};

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Batch normalization over (B,C) or (B,C,H,W). Train mode normalizes with
/// batch statistics (biased variance) and updates the running buffers with
/// an exponential average (unbiased variance); eval mode uses the buffers.
template <typename Scalar>
Var<Scalar> batchnorm(Var<Scalar> input, BatchNormParams<Scalar>& params, Mode mode,
                      BatchNormOptions options = {});

// Operator sugar over the named functions.
template <typename Scalar> Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar> Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar> Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }
template <typename Scalar> Var<Scalar> operator/(Var<Scalar> a, Var<Scalar> b) { return div(a, b); }
template <typename Scalar> Var<Scalar> operator-(Var<Scalar> x) { return scale(x, Scalar(-1)); }

/// Output size of a strided convolution along one spatial axis.
constexpr Index conv_output_size(Index in, Index kernel, Index stride, Index padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

constexpr Index conv_transpose_output_size(Index in, Index kernel, Index stride, Index padding) {
  return (in - 1) * stride - 2 * padding + kernel;
}

}  // namespace crossalign
