#include "crossalign/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace crossalign {

namespace {

template <typename Scalar>
using ArrayOf = typename Tensor<Scalar>::Array;
template <typename Scalar>
using RowMatrixOf = typename Tensor<Scalar>::RowMatrix;

template <typename Scalar>
void require_same_shape(Var<Scalar> a, Var<Scalar> b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename Scalar>
void require_rank(Var<Scalar> x, Index rank, const char* op) {
  if (x.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(x.shape()));
  }
}

template <typename Scalar>
Var<Scalar> unary(Var<Scalar> x, ArrayOf<Scalar> out,
                  std::function<ArrayOf<Scalar>(const ArrayOf<Scalar>& x, const ArrayOf<Scalar>& y,
                                                const ArrayOf<Scalar>& g)>
                      local) {
  Graph<Scalar>& graph = *x.graph;
  Tensor<Scalar> value(x.shape(), std::move(out));
  return graph.record(std::move(value), {x},
                      [x, local, self = graph.size()](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
                        const Var<Scalar> y{&g, self};
                        g.accumulate(x, local(x.value().data(), y.value().data(), og));
                      });
}

// Rows/cols of a rank-1 or rank-2 value as seen by the axis reductions: the
// returned matrix always reduces along its rows.
template <typename Scalar>
RowMatrixOf<Scalar> reduction_view(const Tensor<Scalar>& t, int axis, const char* op) {
  if (t.rank() == 1) {
    if (axis != 1 && axis != 0) {
      throw ShapeError(std::string(op) + ": axis must be 0 or 1");
    }
    return t.matrix(1, t.dim(0));
  }
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + to_string(t.shape()));
  }
  if (axis == 1) {
    return t.matrix(t.dim(0), t.dim(1));
  }
  if (axis == 0) {
    return t.matrix(t.dim(0), t.dim(1)).transpose();
  }
  throw ShapeError(std::string(op) + ": axis must be 0 or 1");
}

// Scatters a gradient computed in reduction_view layout back to the tensor.
template <typename Scalar>
ArrayOf<Scalar> from_reduction_view(const RowMatrixOf<Scalar>& g, const Tensor<Scalar>& t,
                                    int axis) {
  ArrayOf<Scalar> out(t.size());
  if (t.rank() == 2 && axis == 0) {
    Eigen::Map<RowMatrixOf<Scalar>>(out.data(), t.dim(0), t.dim(1)) = g.transpose();
  } else {
    Eigen::Map<RowMatrixOf<Scalar>>(out.data(), g.rows(), g.cols()) = g;
  }
  return out;
}

template <typename Scalar>
Var<Scalar> row_reduction(
    Var<Scalar> x, int axis, const char* op,
    std::function<ArrayOf<Scalar>(const RowMatrixOf<Scalar>&)> forward,
    std::function<RowMatrixOf<Scalar>(const RowMatrixOf<Scalar>&, const ArrayOf<Scalar>& y,
                                      const ArrayOf<Scalar>& g)>
        backward) {
  const RowMatrixOf<Scalar> view = reduction_view(x.value(), axis, op);
  ArrayOf<Scalar> out = forward(view);
  Graph<Scalar>& graph = *x.graph;
  const Index n = out.size();
  Tensor<Scalar> value(Shape{n}, std::move(out));
  return graph.record(
      std::move(value), {x},
      [x, axis, op, backward, self = graph.size()](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
        const RowMatrixOf<Scalar> view = reduction_view(x.value(), axis, op);
        const Var<Scalar> y{&g, self};
        g.accumulate(x, from_reduction_view<Scalar>(backward(view, y.value().data(), og),
                                                    x.value(), axis));
      });
}

// Output columns [lo, hi) whose input column ow*stride - padding + kj lies
// inside [0, width).
inline std::pair<Index, Index> valid_columns(Index kj, Index stride, Index padding, Index width,
                                             Index out_w) {
  const Index first = padding - kj;  // ow * stride >= first
  const Index lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const Index last = width - 1 + padding - kj;  // ow * stride <= last
  const Index hi = last < 0 ? 0 : std::min(out_w, last / stride + 1);
  return {std::min(lo, hi), hi};
}

// Unfolds one (C,H,W) image into a (C*k*k, Ho*Wo) patch matrix whose rows
// are `ld` elements apart, so several images can share one wide matrix.
template <typename Scalar>
void im2col(const Scalar* img, Index channels, Index height, Index width, Index kernel,
            Index stride, Index padding, Index out_h, Index out_w, Scalar* cols, Index ld) {
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kernel; ++ki) {
      for (Index kj = 0; kj < kernel; ++kj) {
        Scalar* row = cols + ((c * kernel + ki) * kernel + kj) * ld;
        const auto [lo, hi] = valid_columns(kj, stride, padding, width, out_w);
        for (Index oh = 0; oh < out_h; ++oh) {
          Scalar* out = row + oh * out_w;
          const Index ih = oh * stride - padding + ki;
          if (ih < 0 || ih >= height) {
            std::fill(out, out + out_w, Scalar(0));
            continue;
          }
          const Scalar* in = img + (c * height + ih) * width + kj - padding;
          std::fill(out, out + lo, Scalar(0));
          for (Index ow = lo; ow < hi; ++ow) out[ow] = in[ow * stride];
          std::fill(out + hi, out + out_w, Scalar(0));
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates patch values back into the image.
template <typename Scalar>
void col2im(const Scalar* cols, Index channels, Index height, Index width, Index kernel,
            Index stride, Index padding, Index out_h, Index out_w, Scalar* img, Index ld) {
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kernel; ++ki) {
      for (Index kj = 0; kj < kernel; ++kj) {
        const Scalar* row = cols + ((c * kernel + ki) * kernel + kj) * ld;
        const auto [lo, hi] = valid_columns(kj, stride, padding, width, out_w);
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * stride - padding + ki;
          if (ih < 0 || ih >= height) {
            continue;
          }
          const Scalar* in = row + oh * out_w;
          Scalar* out = img + (c * height + ih) * width + kj - padding;
          for (Index ow = lo; ow < hi; ++ow) out[ow * stride] += in[ow];
        }
      }
    }
  }
}

// (B, C, S) batch <-> (C, B*S) matrix with images side by side.
template <typename Scalar>
RowMatrixOf<Scalar> channels_by_batch(const Scalar* data, Index batch, Index channels,
                                      Index spatial) {
  RowMatrixOf<Scalar> out(channels, batch * spatial);
  for (Index n = 0; n < batch; ++n) {
    out.middleCols(n * spatial, spatial) =
        Eigen::Map<const RowMatrixOf<Scalar>>(data + n * channels * spatial, channels, spatial);
  }
  return out;
}

template <typename Scalar>
void batch_from_channels(const RowMatrixOf<Scalar>& m, Index batch, Index spatial, Scalar* data) {
  const Index channels = m.rows();
  for (Index n = 0; n < batch; ++n) {
    Eigen::Map<RowMatrixOf<Scalar>>(data + n * channels * spatial, channels, spatial) =
        m.middleCols(n * spatial, spatial);
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a, b, "add");
  Tensor<Scalar> value(a.shape(), a.value().data() + b.value().data());
  return a.graph->record(std::move(value), {a, b},
                         [a, b](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
                           g.accumulate(a, og);
                           g.accumulate(b, og);
                         });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a, b, "sub");
  Tensor<Scalar> value(a.shape(), a.value().data() - b.value().data());
  return a.graph->record(std::move(value), {a, b},
                         [a, b](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
                           g.accumulate(a, og);
                           g.accumulate(b, -og);
                         });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a, b, "mul");
  Tensor<Scalar> value(a.shape(), a.value().data() * b.value().data());
  return a.graph->record(std::move(value), {a, b},
                         [a, b](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
                           if (g.needs_grad(a)) g.accumulate(a, og * b.value().data());
                           if (g.needs_grad(b)) g.accumulate(b, og * a.value().data());
                         });
}

template <typename Scalar>
Var<Scalar> div(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a, b, "div");
  Tensor<Scalar> value(a.shape(), a.value().data() / b.value().data());
  return a.graph->record(std::move(value), {a, b},
                         [a, b](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
                           const auto& bv = b.value().data();
                           if (g.needs_grad(a)) g.accumulate(a, og / bv);
                           if (g.needs_grad(b)) {
                             g.accumulate(b, -og * a.value().data() / bv.square());
                           }
                         });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  return unary<Scalar>(x, x.value().data() * factor,
                       [factor](const auto&, const auto&, const auto& g) -> ArrayOf<Scalar> {
                         return g * factor;
                       });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> x, Scalar offset) {
  return unary<Scalar>(x, x.value().data() + offset,
                       [](const auto&, const auto&, const auto& g) -> ArrayOf<Scalar> { return g; });
}

template <typename Scalar>
Var<Scalar> exp(Var<Scalar> x) {
  return unary<Scalar>(x, x.value().data().exp(),
                       [](const auto&, const auto& y, const auto& g) -> ArrayOf<Scalar> {
                         return g * y;
                       });
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> x) {
  return unary<Scalar>(x, x.value().data().log(),
                       [](const auto& in, const auto&, const auto& g) -> ArrayOf<Scalar> {
                         return g / in;
                       });
}

template <typename Scalar>
Var<Scalar> sqrt(Var<Scalar> x) {
  return unary<Scalar>(x, x.value().data().sqrt(),
                       [](const auto&, const auto& y, const auto& g) -> ArrayOf<Scalar> {
                         return g * Scalar(0.5) / y;
                       });
}

template <typename Scalar>
Var<Scalar> square(Var<Scalar> x) {
  return unary<Scalar>(x, x.value().data().square(),
                       [](const auto& in, const auto&, const auto& g) -> ArrayOf<Scalar> {
                         return g * Scalar(2) * in;
                       });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  const auto& in = x.value().data();
  ArrayOf<Scalar> out = in.unaryExpr([](Scalar v) {
    if (v >= 0) {
      return Scalar(1) / (Scalar(1) + std::exp(-v));
    }
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  return unary<Scalar>(x, std::move(out),
                       [](const auto&, const auto& y, const auto& g) -> ArrayOf<Scalar> {
                         return g * y * (Scalar(1) - y);
                       });
}

template <typename Scalar>
Var<Scalar> leaky_relu(Var<Scalar> x, Scalar slope) {
  const auto& in = x.value().data();
  ArrayOf<Scalar> out = (in >= Scalar(0)).select(in, in * slope);
  return unary<Scalar>(x, std::move(out),
                       [slope](const auto& v, const auto&, const auto& g) -> ArrayOf<Scalar> {
                         return (v >= Scalar(0)).select(g, g * slope);
                       });
}

template <typename Scalar>
Var<Scalar> clamp(Var<Scalar> x, Scalar lo, Scalar hi) {
  const auto& in = x.value().data();
  return unary<Scalar>(
      x, in.max(lo).min(hi),
      [lo, hi](const auto& v, const auto&, const auto& g) -> ArrayOf<Scalar> {
        return ((v >= lo) && (v <= hi)).select(g, ArrayOf<Scalar>::Zero(g.size()));
      });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tensor<Scalar> value = Tensor<Scalar>::scalar(x.value().data().sum());
  return x.graph->record(std::move(value), {x},
                         [x](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
                           g.accumulate(x, ArrayOf<Scalar>::Constant(x.size(), og[0]));
                         });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  const Scalar n = static_cast<Scalar>(x.size());
  Tensor<Scalar> value = Tensor<Scalar>::scalar(x.value().data().sum() / n);
  return x.graph->record(std::move(value), {x},
                         [x, n](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
                           g.accumulate(x, ArrayOf<Scalar>::Constant(x.size(), og[0] / n));
                         });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x, int axis) {
  return row_reduction<Scalar>(
      x, axis, "sum",
      [](const RowMatrixOf<Scalar>& m) -> ArrayOf<Scalar> { return m.rowwise().sum().array(); },
      [](const RowMatrixOf<Scalar>& m, const ArrayOf<Scalar>&, const ArrayOf<Scalar>& g) {
        RowMatrixOf<Scalar> out = g.matrix().replicate(1, m.cols());
        return out;
      });
}

template <typename Scalar>
Var<Scalar> l2_norm(Var<Scalar> x, int axis) {
  return row_reduction<Scalar>(
      x, axis, "l2_norm",
      [](const RowMatrixOf<Scalar>& m) -> ArrayOf<Scalar> { return m.rowwise().norm().array(); },
      [](const RowMatrixOf<Scalar>& m, const ArrayOf<Scalar>& y, const ArrayOf<Scalar>& g) {
        RowMatrixOf<Scalar> out(m.rows(), m.cols());
        for (Index r = 0; r < m.rows(); ++r) {
          out.row(r) = y[r] > Scalar(0) ? RowMatrixOf<Scalar>(m.row(r) * (g[r] / y[r]))
                                        : RowMatrixOf<Scalar>::Zero(1, m.cols());
        }
        return out;
      });
}

template <typename Scalar>
Var<Scalar> logsumexp(Var<Scalar> x, int axis) {
  return row_reduction<Scalar>(
      x, axis, "logsumexp",
      [](const RowMatrixOf<Scalar>& m) -> ArrayOf<Scalar> {
        ArrayOf<Scalar> out(m.rows());
        for (Index r = 0; r < m.rows(); ++r) {
          const Scalar peak = m.row(r).maxCoeff();
          out[r] = peak + std::log((m.row(r).array() - peak).exp().sum());
        }
        return out;
      },
      [](const RowMatrixOf<Scalar>& m, const ArrayOf<Scalar>& y, const ArrayOf<Scalar>& g) {
        RowMatrixOf<Scalar> out(m.rows(), m.cols());
        for (Index r = 0; r < m.rows(); ++r) {
          out.row(r) = (m.row(r).array() - y[r]).exp() * g[r];
        }
        return out;
      });
}

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  Tensor<Scalar> value(Shape{m, n});
  value.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
  return a.graph->record(std::move(value), {a, b},
                         [a, b, m, k, n](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
                           Eigen::Map<const RowMatrixOf<Scalar>> dout(og.data(), m, n);
                           if (g.needs_grad(a)) {
                             ArrayOf<Scalar> da(m * k);
                             Eigen::Map<RowMatrixOf<Scalar>>(da.data(), m, k).noalias() =
                                 dout * b.value().matrix(k, n).transpose();
                             g.accumulate(a, da);
                           }
                           if (g.needs_grad(b)) {
                             ArrayOf<Scalar> db(k * n);
                             Eigen::Map<RowMatrixOf<Scalar>>(db.data(), k, n).noalias() =
                                 a.value().matrix(m, k).transpose() * dout;
                             g.accumulate(b, db);
                           }
                         });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> x) {
  require_rank(x, 2, "transpose");
  const Index r = x.dim(0), c = x.dim(1);
  Tensor<Scalar> value(Shape{c, r});
  value.matrix(c, r) = x.value().matrix(r, c).transpose();
  return x.graph->record(std::move(value), {x},
                         [x, r, c](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
                           ArrayOf<Scalar> dx(r * c);
                           Eigen::Map<RowMatrixOf<Scalar>>(dx.data(), r, c) =
                               Eigen::Map<const RowMatrixOf<Scalar>>(og.data(), c, r).transpose();
                           g.accumulate(x, dx);
                         });
}

template <typename Scalar>
Var<Scalar> diagonal(Var<Scalar> x) {
  require_rank(x, 2, "diagonal");
  const Index n = x.dim(0);
  if (x.dim(1) != n) {
    throw ShapeError("diagonal: matrix must be square, got " + to_string(x.shape()));
  }
  Tensor<Scalar> value(Shape{n});
  value.data() = x.value().matrix(n, n).diagonal().array();
  return x.graph->record(std::move(value), {x},
                         [x, n](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
                           ArrayOf<Scalar> dx = ArrayOf<Scalar>::Zero(n * n);
                           for (Index i = 0; i < n; ++i) {
                             dx[i * n + i] = og[i];
                           }
                           g.accumulate(x, dx);
                         });
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  Tensor<Scalar> value = x.value().reshaped(std::move(shape));
  return x.graph->record(std::move(value), {x},
                         [x](Graph<Scalar>& g, const ArrayOf<Scalar>& og) { g.accumulate(x, og); });
}

template <typename Scalar>
Var<Scalar> flatten(Var<Scalar> x) {
  if (x.value().rank() < 1) {
    throw ShapeError("flatten: needs a batch dimension");
  }
  const Index batch = x.dim(0);
  return reshape(x, Shape{batch, x.size() / batch});
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> input, Var<Scalar> weight, Var<Scalar> bias) {
  require_rank(input, 2, "linear");
  require_rank(weight, 2, "linear");
  const Index batch = input.dim(0), in = input.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input " + to_string(input.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  if (bias.shape() != Shape{out}) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  Tensor<Scalar> value(Shape{batch, out});
  auto y = value.matrix(batch, out);
  y.noalias() = input.value().matrix(batch, in) * weight.value().matrix(out, in).transpose();
  y.rowwise() += bias.value().data().matrix().transpose();
  return input.graph->record(
      std::move(value), {input, weight, bias},
      [input, weight, bias, batch, in, out](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
        Eigen::Map<const RowMatrixOf<Scalar>> dy(og.data(), batch, out);
        if (g.needs_grad(input)) {
          ArrayOf<Scalar> dx(batch * in);
          Eigen::Map<RowMatrixOf<Scalar>>(dx.data(), batch, in).noalias() =
              dy * weight.value().matrix(out, in);
          g.accumulate(input, dx);
        }
        if (g.needs_grad(weight)) {
          ArrayOf<Scalar> dw(out * in);
          Eigen::Map<RowMatrixOf<Scalar>>(dw.data(), out, in).noalias() =
              dy.transpose() * input.value().matrix(batch, in);
          g.accumulate(weight, dw);
        }
        if (g.needs_grad(bias)) {
          g.accumulate(bias, dy.colwise().sum().transpose().array());
        }
      });
}

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> input, Var<Scalar> weight, Var<Scalar> bias, int stride,
                   int padding) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const Index batch = input.dim(0), cin = input.dim(1), height = input.dim(2),
              width = input.dim(3);
  const Index cout = weight.dim(0), kernel = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: input " + to_string(input.shape()) + " has " + std::to_string(cin) +
                     " channels but weight " + to_string(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != kernel) {
    throw ShapeError("conv2d: kernel must be square, got " + to_string(weight.shape()));
  }
  if (bias.shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  if (stride < 1 || padding < 0) {
    throw ArgumentError("conv2d: stride must be >= 1 and padding >= 0");
  }
  if (height + 2 * padding < kernel || width + 2 * padding < kernel) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     to_string(input.shape()));
  }
  const Index out_h = conv_output_size(height, kernel, stride, padding);
  const Index out_w = conv_output_size(width, kernel, stride, padding);
  const Index patch = cin * kernel * kernel, spatial = out_h * out_w;

  // All images share one patch matrix so each layer is a single GEMM.
  auto unfold = [=](const Scalar* images) {
    RowMatrixOf<Scalar> cols(patch, batch * spatial);
    for (Index n = 0; n < batch; ++n) {
      im2col(images + n * cin * height * width, cin, height, width, kernel, stride, padding,
             out_h, out_w, cols.data() + n * spatial, batch * spatial);
    }
    return cols;
  };
  Tensor<Scalar> value(Shape{batch, cout, out_h, out_w});
  {
    RowMatrixOf<Scalar> y = weight.value().matrix(cout, patch) * unfold(input.value().raw());
    y.colwise() += bias.value().data().matrix();
    batch_from_channels(y, batch, spatial, value.raw());
  }
  return input.graph->record(
      std::move(value), {input, weight, bias},
      [=](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
        const RowMatrixOf<Scalar> dy = channels_by_batch(og.data(), batch, cout, spatial);
        if (g.needs_grad(weight)) {
          const RowMatrixOf<Scalar> dw = dy * unfold(input.value().raw()).transpose();
          g.accumulate(weight, Eigen::Map<const ArrayOf<Scalar>>(dw.data(), dw.size()));
        }
        if (g.needs_grad(input)) {
          const RowMatrixOf<Scalar> cols =
              weight.value().matrix(cout, patch).transpose() * dy;
          ArrayOf<Scalar> dx = ArrayOf<Scalar>::Zero(input.size());
          for (Index n = 0; n < batch; ++n) {
            col2im(cols.data() + n * spatial, cin, height, width, kernel, stride, padding, out_h,
                   out_w, dx.data() + n * cin * height * width, batch * spatial);
          }
          g.accumulate(input, dx);
        }
        g.accumulate(bias, ArrayOf<Scalar>(dy.rowwise().sum().array()));
      });
}

template <typename Scalar>
Var<Scalar> conv_transpose2d(Var<Scalar> input, Var<Scalar> weight, Var<Scalar> bias, int stride,
                             int padding) {
  require_rank(input, 4, "conv_transpose2d");
  require_rank(weight, 4, "conv_transpose2d");
  const Index batch = input.dim(0), cin = input.dim(1), height = input.dim(2),
              width = input.dim(3);
  const Index cout = weight.dim(1), kernel = weight.dim(2);
  if (weight.dim(0) != cin) {
    throw ShapeError("conv_transpose2d: input " + to_string(input.shape()) + " has " +
                     std::to_string(cin) + " channels but weight " + to_string(weight.shape()) +
                     " expects " + std::to_string(weight.dim(0)));
  }
  if (weight.dim(3) != kernel) {
    throw ShapeError("conv_transpose2d: kernel must be square, got " + to_string(weight.shape()));
  }
  if (bias.shape() != Shape{cout}) {
    throw ShapeError("conv_transpose2d: bias " + to_string(bias.shape()) +
                     " does not match weight " + to_string(weight.shape()));
  }
  if (stride < 1 || padding < 0) {
    throw ArgumentError("conv_transpose2d: stride must be >= 1 and padding >= 0");
  }
  const Index out_h = conv_transpose_output_size(height, kernel, stride, padding);
  const Index out_w = conv_transpose_output_size(width, kernel, stride, padding);
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("conv_transpose2d: empty output for input " + to_string(input.shape()));
  }
  const Index patch = cout * kernel * kernel, in_spatial = height * width,
              out_spatial = out_h * out_w;

  const Index wide = batch * in_spatial;
  Tensor<Scalar> value(Shape{batch, cout, out_h, out_w});
  {
    const RowMatrixOf<Scalar> x = channels_by_batch(input.value().raw(), batch, cin, in_spatial);
    const RowMatrixOf<Scalar> cols = weight.value().matrix(cin, patch).transpose() * x;
    value.data().setZero();
    for (Index n = 0; n < batch; ++n) {
      Scalar* y = value.raw() + n * cout * out_spatial;
      col2im(cols.data() + n * in_spatial, cout, out_h, out_w, kernel, stride, padding, height,
             width, y, wide);
      Eigen::Map<RowMatrixOf<Scalar>>(y, cout, out_spatial).colwise() +=
          bias.value().data().matrix();
    }
  }
  return input.graph->record(
      std::move(value), {input, weight, bias},
      [=](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
        ArrayOf<Scalar> db = ArrayOf<Scalar>::Zero(cout);
        for (Index n = 0; n < batch; ++n) {
          db += Eigen::Map<const RowMatrixOf<Scalar>>(og.data() + n * cout * out_spatial, cout,
                                                      out_spatial)
                    .rowwise()
                    .sum()
                    .array();
        }
        g.accumulate(bias, db);
        const bool want_x = g.needs_grad(input), want_w = g.needs_grad(weight);
        if (!want_x && !want_w) {
          return;
        }
        RowMatrixOf<Scalar> cols(patch, wide);
        for (Index n = 0; n < batch; ++n) {
          im2col(og.data() + n * cout * out_spatial, cout, out_h, out_w, kernel, stride, padding,
                 height, width, cols.data() + n * in_spatial, wide);
        }
        if (want_x) {
          const RowMatrixOf<Scalar> dx = weight.value().matrix(cin, patch) * cols;
          ArrayOf<Scalar> flat(input.size());
          batch_from_channels(dx, batch, in_spatial, flat.data());
          g.accumulate(input, flat);
        }
        if (want_w) {
          const RowMatrixOf<Scalar> dw =
              channels_by_batch(input.value().raw(), batch, cin, in_spatial) * cols.transpose();
          g.accumulate(weight, Eigen::Map<const ArrayOf<Scalar>>(dw.data(), dw.size()));
        }
      });
}

template <typename Scalar>
Var<Scalar> batchnorm(Var<Scalar> input, BatchNormParams<Scalar>& params, Mode mode,
                      BatchNormOptions options) {
  const Index rank = input.value().rank();
  if (rank != 2 && rank != 4) {
    throw ShapeError("batchnorm: expected (B,C) or (B,C,H,W), got " + to_string(input.shape()));
  }
  const Index batch = input.dim(0), channels = input.dim(1);
  const Index spatial = rank == 4 ? input.dim(2) * input.dim(3) : 1;
  if (params.gamma.shape() != Shape{channels}) {
    throw ShapeError("batchnorm: parameters for " + to_string(params.gamma.shape()) +
                     " channels applied to input " + to_string(input.shape()));
  }
  if (mode == Mode::train && batch < 2) {
    throw ShapeError("batchnorm: train mode needs a batch of at least 2, got " +
                     to_string(input.shape()));
  }
  const Scalar eps = static_cast<Scalar>(options.epsilon);
  const Scalar momentum = static_cast<Scalar>(options.momentum);
  const Scalar count = static_cast<Scalar>(batch * spatial);
  const Scalar* x = input.value().raw();

  ArrayOf<Scalar> mu(channels), inv_std(channels);
  if (mode == Mode::train) {
    mu.setZero();
    ArrayOf<Scalar> var = ArrayOf<Scalar>::Zero(channels);
    for (Index n = 0; n < batch; ++n) {
      for (Index c = 0; c < channels; ++c) {
        mu[c] += Eigen::Map<const ArrayOf<Scalar>>(x + (n * channels + c) * spatial, spatial).sum();
      }
    }
    mu /= count;
    for (Index n = 0; n < batch; ++n) {
      for (Index c = 0; c < channels; ++c) {
        var[c] += (Eigen::Map<const ArrayOf<Scalar>>(x + (n * channels + c) * spatial, spatial) -
                   mu[c])
                      .square()
                      .sum();
      }
    }
    var /= count;
    inv_std = (var + eps).rsqrt();
    params.running_mean.data() = (Scalar(1) - momentum) * params.running_mean.data() + momentum * mu;
    params.running_var.data() = (Scalar(1) - momentum) * params.running_var.data() +
                                momentum * var * (count / (count - Scalar(1)));
  } else {
    mu = params.running_mean.data();
    inv_std = (params.running_var.data() + eps).rsqrt();
  }

  Graph<Scalar>& graph = *input.graph;
  const Var<Scalar> gamma = graph.leaf(params.gamma);
  const Var<Scalar> beta = graph.leaf(params.beta);
  ArrayOf<Scalar> xhat(input.size());
  Tensor<Scalar> value(input.shape());
  for (Index n = 0; n < batch; ++n) {
    for (Index c = 0; c < channels; ++c) {
      const Index off = (n * channels + c) * spatial;
      xhat.segment(off, spatial) =
          (Eigen::Map<const ArrayOf<Scalar>>(x + off, spatial) - mu[c]) * inv_std[c];
      value.data().segment(off, spatial) =
          xhat.segment(off, spatial) * gamma.value()[c] + beta.value()[c];
    }
  }
  return graph.record(
      std::move(value), {input, gamma, beta},
      [=, xhat = std::move(xhat)](Graph<Scalar>& g, const ArrayOf<Scalar>& og) {
        ArrayOf<Scalar> dgamma = ArrayOf<Scalar>::Zero(channels);
        ArrayOf<Scalar> dbeta = ArrayOf<Scalar>::Zero(channels);
        for (Index n = 0; n < batch; ++n) {
          for (Index c = 0; c < channels; ++c) {
            const Index off = (n * channels + c) * spatial;
            dbeta[c] += og.segment(off, spatial).sum();
            dgamma[c] += (og.segment(off, spatial) * xhat.segment(off, spatial)).sum();
          }
        }
        if (g.needs_grad(input)) {
          const auto& gv = gamma.value().data();
          ArrayOf<Scalar> dx(og.size());
          for (Index n = 0; n < batch; ++n) {
            for (Index c = 0; c < channels; ++c) {
              const Index off = (n * channels + c) * spatial;
              if (mode == Mode::train) {
                // dxhat = og * gamma; sums over the channel reduce to dbeta, dgamma.
                dx.segment(off, spatial) =
                    gv[c] * inv_std[c] / count *
                    (count * og.segment(off, spatial) - dbeta[c] -
                     xhat.segment(off, spatial) * dgamma[c]);
              } else {
                dx.segment(off, spatial) = og.segment(off, spatial) * (gv[c] * inv_std[c]);
              }
            }
          }
          g.accumulate(input, dx);
        }
        g.accumulate(gamma, dgamma);
        g.accumulate(beta, dbeta);
      });
}

#define CROSSALIGN_INSTANTIATE_OPS(S)                                                        \
  template Var<S> add(Var<S>, Var<S>);                                                       \
  template Var<S> sub(Var<S>, Var<S>);                                                       \
  template Var<S> mul(Var<S>, Var<S>);                                                       \
  template Var<S> div(Var<S>, Var<S>);                                                       \
  template Var<S> scale(Var<S>, S);                                                          \
  template Var<S> add_scalar(Var<S>, S);                                                     \
  template Var<S> exp(Var<S>);                                                               \
  template Var<S> log(Var<S>);                                                               \
  template Var<S> sqrt(Var<S>);                                                              \
  template Var<S> square(Var<S>);                                                            \
  template Var<S> sigmoid(Var<S>);                                                           \
  template Var<S> leaky_relu(Var<S>, S);                                                     \
  template Var<S> clamp(Var<S>, S, S);                                                       \
  template Var<S> sum(Var<S>);                                                               \
  template Var<S> mean(Var<S>);                                                              \
  template Var<S> sum(Var<S>, int);                                                          \
  template Var<S> l2_norm(Var<S>, int);                                                      \
  template Var<S> logsumexp(Var<S>, int);                                                    \
  template Var<S> matmul(Var<S>, Var<S>);                                                    \
  template Var<S> transpose(Var<S>);                                                         \
  template Var<S> diagonal(Var<S>);                                                          \
  template Var<S> reshape(Var<S>, Shape);                                                    \
  template Var<S> flatten(Var<S>);                                                           \
  template Var<S> linear(Var<S>, Var<S>, Var<S>);                                            \
  template Var<S> conv2d(Var<S>, Var<S>, Var<S>, int, int);                                  \
  template Var<S> conv_transpose2d(Var<S>, Var<S>, Var<S>, int, int);                        \
  template Var<S> batchnorm(Var<S>, BatchNormParams<S>&, Mode, BatchNormOptions);

CROSSALIGN_INSTANTIATE_OPS(float)
CROSSALIGN_INSTANTIATE_OPS(double)

#undef CROSSALIGN_INSTANTIATE_OPS

}  // namespace crossalign
