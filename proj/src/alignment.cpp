#include "crossalign/alignment.hpp"

#include <atomic>

namespace crossalign {

namespace {

std::atomic<std::uint64_t> g_degenerate{0};

}  // namespace

std::uint64_t degenerate_embedding_count() { return g_degenerate.load(); }
void reset_degenerate_embedding_count() { g_degenerate.store(0); }
void note_degenerate_embedding(std::uint64_t count) { g_degenerate.fetch_add(count); }

template <typename Scalar>
Var<Scalar> normalize_rows(Var<Scalar> x) {
  using Array = typename Tensor<Scalar>::Array;
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  if (x.value().rank() != 2) {
    throw ShapeError("normalize_rows: expected (N,d), got " + to_string(x.shape()));
  }
  const Index rows = x.dim(0), cols = x.dim(1);
  const auto in = x.value().matrix(rows, cols);
  Array inv_norm(rows);
  std::uint64_t degenerate = 0;
  for (Index r = 0; r < rows; ++r) {
    const double n = static_cast<double>(in.row(r).norm());
    if (n < kDegenerateNorm) {
      inv_norm[r] = Scalar(0);
      ++degenerate;
    } else {
      inv_norm[r] = static_cast<Scalar>(1.0 / n);
    }
  }
  if (degenerate) {
    note_degenerate_embedding(degenerate);
  }
  Tensor<Scalar> value(x.shape());
  value.matrix(rows, cols) = inv_norm.matrix().asDiagonal() * in;
  Graph<Scalar>& graph = *x.graph;
  return graph.record(
      std::move(value), {x},
      [x, rows, cols, inv_norm, self = graph.size()](Graph<Scalar>& g, const Array& og) {
        const auto y = g.value(Var<Scalar>{&g, self}).matrix(rows, cols);
        Eigen::Map<const RowMatrix> dy(og.data(), rows, cols);
        Array dx(rows * cols);
        Eigen::Map<RowMatrix> out(dx.data(), rows, cols);
        for (Index r = 0; r < rows; ++r) {
          // d(x/|x|) = (dy - y (y.dy)) / |x|
          out.row(r) = (dy.row(r) - y.row(r) * y.row(r).dot(dy.row(r))) * inv_norm[r];
        }
        g.accumulate(x, dx);
      });
}

template <typename Scalar>
Var<Scalar> similarity_matrix(Var<Scalar> image_embeddings, Var<Scalar> spike_embeddings) {
  const Shape& a = image_embeddings.shape();
  const Shape& b = spike_embeddings.shape();
  if (a.size() != 2 || b.size() != 2 || a != b) {
    throw ShapeError("similarity_matrix: embeddings must both be (N,d), got " + to_string(a) +
                     " and " + to_string(b));
  }
  Var<Scalar> w = matmul(normalize_rows(image_embeddings),
                         transpose(normalize_rows(spike_embeddings)));
  return clamp(w, Scalar(-1), Scalar(1));
}

template <typename Scalar>
Var<Scalar> contrastive_loss(Var<Scalar> similarity, double temperature) {
  const Shape& s = similarity.shape();
  if (s.size() != 2 || s[0] != s[1]) {
    throw ShapeError("contrastive_loss: similarity matrix must be square, got " + to_string(s));
  }
  if (!(temperature > 0.0)) {
    throw ArgumentError("contrastive_loss: temperature must be positive");
  }
  const Index n = s[0];
  Var<Scalar> logits =
      temperature == 1.0 ? similarity : scale(similarity, static_cast<Scalar>(1.0 / temperature));
  Var<Scalar> total = sum(logsumexp(logits, 1)) + sum(logsumexp(logits, 0));
  total = total - scale(sum(diagonal(logits)), Scalar(2));
  return scale(total, static_cast<Scalar>(1.0 / (2.0 * static_cast<double>(n))));
}

template Var<float> normalize_rows(Var<float>);
template Var<double> normalize_rows(Var<double>);
template Var<float> similarity_matrix(Var<float>, Var<float>);
template Var<double> similarity_matrix(Var<double>, Var<double>);
template Var<float> contrastive_loss(Var<float>, double);
template Var<double> contrastive_loss(Var<double>, double);

}  // namespace crossalign
