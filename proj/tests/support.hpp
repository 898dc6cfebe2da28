#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "crossalign/finite_diff.hpp"
#include "crossalign/ops.hpp"

namespace crossalign::testing {

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

inline Tensor<double> normal_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = scale * standard_normal(rng);
  return t;
}

/// Resamples entries closer than `margin` to any of the given kinks.
inline void avoid_kinks(Tensor<double>& t, Rng& rng, std::initializer_list<double> kinks,
                        double margin = 1e-3) {
  for (Index i = 0; i < t.size(); ++i) {
    auto near = [&] {
      return std::any_of(kinks.begin(), kinks.end(),
                         [&](double k) { return std::abs(t[i] - k) < margin; });
    };
    while (near()) t[i] = uniform(rng, -1.0, 1.0);
  }
}

/// Finite-difference step and norm floor for whole towers. Thousands of
/// weight probes meet leaky_relu kinks often at 1e-5; the smaller step keeps
/// crossings rare but leaves ~1e-7 of noise on structurally zero gradients.
inline constexpr double kTowerStep = 1e-7;
inline constexpr double kTowerFloor = 1e-2;

using Build = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

/// Largest norm-wise relative error ||analytic - numeric|| / max(||a||, ||n||)
/// over the given input tensors, with norms below `floor` treated as `floor`. The
/// (possibly non-scalar) output of `build` is reduced with fixed random
/// weights so every output element matters.
inline double gradient_error(const Build& build, const std::vector<Tensor<double>*>& inputs,
                             std::uint64_t seed, double h = 1e-5, double floor = 1e-4) {
  Tensor<double> weights;
  {
    Graph<double> g(false);
    std::vector<Var<double>> vars;
    for (auto* t : inputs) vars.push_back(g.leaf(*t));
    Rng rng(seed);
    weights = normal_tensor(build(g, vars).shape(), rng);
  }
  auto loss = [&](Graph<double>& g) {
    std::vector<Var<double>> vars;
    for (auto* t : inputs) vars.push_back(g.leaf(*t));
    return sum(mul(build(g, vars), g.constant(weights)));
  };
  for (auto* t : inputs) {
    t->set_requires_grad(true);
    t->zero_grad();
  }
  {
    Graph<double> g;
    g.backward(loss(g));
  }
  double worst = 0.0;
  for (auto* t : inputs) {
    const Tensor<double>::Array analytic = t->grad();
    const std::function<double(const Tensor<double>&)> fn = [&](const Tensor<double>& probe) {
      const Tensor<double>::Array saved = t->data();
      t->data() = probe.data();
      Graph<double> g(false);
      const double value = loss(g).value().item();
      t->data() = saved;
      return value;
    };
    const auto numeric = finite_diff_grad(fn, *t, h).data();
    // The floor keeps structurally zero gradients (a bias feeding batchnorm)
    // from turning rounding noise into a relative error of 1.
    const double scale = std::max({analytic.matrix().norm(), numeric.matrix().norm(), floor});
    worst = std::max(worst, (analytic - numeric).matrix().norm() / scale);
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("crossalign_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace crossalign::testing
