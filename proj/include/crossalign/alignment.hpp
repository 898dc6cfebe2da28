#pragma once

#include <algorithm>
#include <cstdint>

#include <Eigen/Core>

#include "crossalign/ops.hpp"

namespace crossalign {

/// Embeddings with a norm below this are degenerate and score 0.
inline constexpr double kDegenerateNorm = 1e-12;

/// Number of degenerate embeddings met by the similarity functions since
/// start-up (or the last reset). Thread-safe.
std::uint64_t degenerate_embedding_count();
void reset_degenerate_embedding_count();
void note_degenerate_embedding(std::uint64_t count = 1);

/// a.b / (|a| |b|) clamped to [-1, 1]; 0 if either vector is degenerate.
template <typename DerivedA, typename DerivedB>
double cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                         const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " differ");
  }
  const double na = a.template cast<double>().norm();
  const double nb = b.template cast<double>().norm();
  if (na < kDegenerateNorm || nb < kDegenerateNorm) {
    note_degenerate_embedding();
    return 0.0;
  }
  const double dot = a.template cast<double>().dot(b.template cast<double>());
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

/// Cosine score of the query against every row of `candidates`, in row
/// order; higher is better.
template <typename DerivedQ, typename DerivedC>
Eigen::VectorXd rank_candidates(const Eigen::MatrixBase<DerivedQ>& query,
                                const Eigen::MatrixBase<DerivedC>& candidates) {
  if (candidates.rows() == 0) {
    throw ArgumentError("rank_candidates: empty candidate list");
  }
  if (candidates.cols() != query.size()) {
    throw ShapeError("rank_candidates: query has dimension " + std::to_string(query.size()) +
                     " but candidates have " + std::to_string(candidates.cols()));
  }
  Eigen::VectorXd scores(candidates.rows());
  for (Index i = 0; i < candidates.rows(); ++i) {
    scores[i] = cosine_similarity(query.transpose(), candidates.row(i));
  }
  return scores;
}

/// Divides every row by its L2 norm; degenerate rows map to zero rows.
template <typename Scalar>
Var<Scalar> normalize_rows(Var<Scalar> x);

/// w_ij = cos(image_i, response_j) for (N,d) embedding batches; rows index
/// images and columns index responses. Differentiable.
template <typename Scalar>
Var<Scalar> similarity_matrix(Var<Scalar> image_embeddings, Var<Scalar> spike_embeddings);

/// Symmetric contrastive loss over a square similarity matrix:
///   L = -1/(2N) sum_i [log softmax_row_i(W)_i + log softmax_col_i(W)_i].
/// `temperature` divides the logits; 1 (the default) leaves W untouched.
template <typename Scalar>
Var<Scalar> contrastive_loss(Var<Scalar> similarity, double temperature = 1.0);

}  // namespace crossalign
