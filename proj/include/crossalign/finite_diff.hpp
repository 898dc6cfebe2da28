#pragma once

#include <functional>

#include "crossalign/tensor.hpp"

namespace crossalign {

/// Central-difference gradient estimate of a scalar function:
/// (fn(x + h e_i) - fn(x - h e_i)) / 2h for every coordinate i.
template <typename Scalar>
Tensor<Scalar> finite_diff_grad(const std::function<Scalar(const Tensor<Scalar>&)>& fn,
                                const Tensor<Scalar>& point, Scalar h) {
  if (!(h > Scalar(0))) {
    throw ArgumentError("finite_diff_grad: step must be positive");
  }
  Tensor<Scalar> probe = point;
  Tensor<Scalar> grad(point.shape());
  for (Index i = 0; i < point.size(); ++i) {
    const Scalar x = point[i];
    probe[i] = x + h;
    const Scalar up = fn(probe);
    probe[i] = x - h;
    const Scalar down = fn(probe);
    probe[i] = x;
    grad[i] = (up - down) / (Scalar(2) * h);
  }
  return grad;
}

}  // namespace crossalign
