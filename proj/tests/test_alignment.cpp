#include <doctest.h>

#include <cmath>
#include <numbers>

#include "crossalign/alignment.hpp"
#include "support.hpp"

using namespace crossalign;
using crossalign::testing::gradient_error;
using crossalign::testing::normal_tensor;
using crossalign::testing::random_tensor;

namespace {

// Straightforward loop form of the symmetric contrastive loss.
double reference_loss(const Eigen::MatrixXd& w, double temperature = 1.0) {
  const Index n = w.rows();
  long double total = 0;
  for (Index i = 0; i < n; ++i) {
    long double row = 0, col = 0;
    for (Index j = 0; j < n; ++j) {
      row += std::exp(static_cast<long double>(w(i, j) / temperature));
      col += std::exp(static_cast<long double>(w(j, i) / temperature));
    }
    const long double diag = w(i, i) / temperature;
    total += (std::log(row) - diag) + (std::log(col) - diag);
  }
  return static_cast<double>(total / (2 * n));
}

double loss_of(const Eigen::MatrixXd& w, double temperature = 1.0) {
  Graph<double> g(false);
  Tensor<double> t(Shape{w.rows(), w.cols()});
  t.matrix(w.rows(), w.cols()) = w;
  return contrastive_loss(g.constant(t), temperature).value().item();
}

}  // namespace

TEST_SUITE("alignment") {

TEST_CASE("cosine_similarity") {
  Eigen::Vector3d a(1, 0, 0), b(0, 2, 0), c(-3, 0, 0);
  CHECK(cosine_similarity(a, a) == 1.0);
  CHECK(cosine_similarity(a, b) == 0.0);
  CHECK(cosine_similarity(a, c) == -1.0);
  CHECK(cosine_similarity(Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 0)) ==
        doctest::Approx(std::numbers::sqrt2 / 2).epsilon(1e-15));

  SUBCASE("degenerate vectors score zero and are counted") {
    reset_degenerate_embedding_count();
    CHECK(cosine_similarity(a, Eigen::Vector3d::Zero()) == 0.0);
    CHECK(cosine_similarity(Eigen::Vector3d::Constant(1e-14), a) == 0.0);
    CHECK(degenerate_embedding_count() == 2);
  }
  SUBCASE("length mismatch") {
    const Eigen::VectorXd longer = a, shorter = Eigen::Vector2d(1, 0);
    CHECK_THROWS_AS(cosine_similarity(longer, shorter), ShapeError);
  }
  SUBCASE("result is clamped to [-1, 1]") {
    Rng rng(9);
    for (int trial = 0; trial < 1000; ++trial) {
      Eigen::VectorXd v(5);
      for (Index i = 0; i < 5; ++i) v[i] = uniform(rng, -1e3, 1e3);
      const double s = cosine_similarity(v, (v * 3.7).eval());
      CHECK(s <= 1.0);
      CHECK(s >= 0.999999999);
    }
  }
}

TEST_CASE("rank_candidates") {
  Eigen::Vector2d q(1, 0);
  Eigen::MatrixXd cands(3, 2);
  cands << 1, 0, 0, 1, -1, 0;
  const auto s = rank_candidates(q, cands);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == -1.0);
  CHECK_THROWS_AS(rank_candidates(q, Eigen::MatrixXd(0, 2)), ArgumentError);
  CHECK_THROWS_AS(rank_candidates(q, Eigen::MatrixXd(2, 3)), ShapeError);
}

TEST_CASE("similarity_matrix matches pairwise cosines") {
  Rng rng(10);
  const auto img = normal_tensor({5, 7}, rng);
  const auto spk = normal_tensor({5, 7}, rng);
  Graph<double> g(false);
  const auto w = similarity_matrix(g.constant(img), g.constant(spk)).value();
  REQUIRE(w.shape() == Shape{5, 5});
  const auto a = img.matrix(5, 7), b = spk.matrix(5, 7);
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 5; ++j) {
      const double expected = a.row(i).dot(b.row(j)) / (a.row(i).norm() * b.row(j).norm());
      CHECK(w[i * 5 + j] == doctest::Approx(expected).epsilon(1e-13));
    }
  }
  CHECK_THROWS_AS(similarity_matrix(g.constant(img), g.constant(normal_tensor({5, 6}, rng))),
                  ShapeError);
}

TEST_CASE("normalize_rows maps zero rows to zero") {
  Graph<double> g(false);
  const auto y = normalize_rows(g.constant(Tensor<double>::from({2, 2}, {3, 4, 0, 0}))).value();
  CHECK(y[0] == doctest::Approx(0.6));
  CHECK(y[1] == doctest::Approx(0.8));
  CHECK(y[2] == 0.0);
  CHECK(y[3] == 0.0);
}

TEST_CASE("contrastive_loss identities") {
  CHECK(std::abs(loss_of(Eigen::MatrixXd::Zero(4, 4)) - std::log(4.0)) <= 1e-12);
  Eigen::MatrixXd w(2, 2);
  w << 1, -1, -1, 1;
  CHECK(std::abs(loss_of(w) - std::log1p(std::exp(-2.0))) <= 1e-12);
  CHECK_THROWS_AS(loss_of(Eigen::MatrixXd::Zero(2, 3)), ShapeError);
}

TEST_CASE("contrastive_loss agrees with the loop form") {
  Rng rng(11);
  for (Index n : {1, 2, 3, 8, 33}) {
    for (double temperature : {1.0, 0.1, 2.5}) {
      Eigen::MatrixXd w(n, n);
      for (Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -1, 1);
      CHECK(loss_of(w, temperature) ==
            doctest::Approx(reference_loss(w, temperature)).epsilon(1e-13));
    }
  }
  SUBCASE("large logits do not overflow") {
    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(3, 3);
    const double loss = loss_of(w, 1e-3);
    CHECK(std::isfinite(loss));
    CHECK(loss == doctest::Approx(std::log1p(2 * std::exp(-1000.0))).epsilon(1e-12));
  }
}

TEST_CASE("contrastive_loss lower bound over random embeddings") {
  Rng rng(12);
  for (Index n : {2, 4, 256}) {
    const double bound = std::log1p(static_cast<double>(n - 1) * std::exp(-2.0));
    double worst = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 1000; ++trial) {
      const Index d = 1 + static_cast<Index>(uniform_index(rng, 16));
      Graph<double> g(false);
      const auto w = similarity_matrix(g.constant(normal_tensor({n, d}, rng)),
                                       g.constant(normal_tensor({n, d}, rng)));
      worst = std::min(worst, contrastive_loss(w).value().item() - bound);
    }
    INFO("N = " << n);
    // Attained exactly by one-dimensional embeddings, so allow rounding.
    CHECK(worst >= -1e-12);
  }
}

TEST_CASE("alignment gradients match finite differences") {
  Rng rng(13);
  auto img = normal_tensor({4, 5}, rng);
  auto spk = normal_tensor({4, 5}, rng);
  SUBCASE("normalize_rows") {
    const auto build = [](Graph<double>&, const std::vector<Var<double>>& v) {
      return normalize_rows(v[0]);
    };
    CHECK(gradient_error(build, {&img}, 1) < 1e-4);
  }
  SUBCASE("similarity_matrix") {
    const auto build = [](Graph<double>&, const std::vector<Var<double>>& v) {
      return similarity_matrix(v[0], v[1]);
    };
    CHECK(gradient_error(build, {&img, &spk}, 2) < 1e-4);
  }
  SUBCASE("contrastive_loss over embeddings") {
    for (double temperature : {1.0, 0.2}) {
      const auto build = [temperature](Graph<double>&, const std::vector<Var<double>>& v) {
        return contrastive_loss(similarity_matrix(v[0], v[1]), temperature);
      };
      CHECK(gradient_error(build, {&img, &spk}, 3) < 1e-4);
    }
  }
  SUBCASE("contrastive_loss over a raw matrix") {
    auto w = random_tensor({6, 6}, rng);
    const auto build = [](Graph<double>&, const std::vector<Var<double>>& v) {
      return contrastive_loss(v[0]);
    };
    CHECK(gradient_error(build, {&w}, 4) < 1e-4);
  }
}

}  // TEST_SUITE
