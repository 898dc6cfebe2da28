#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crossalign/dataio.hpp"

namespace crossalign {

/// Side length of the pooled image fed to the feature projection.
inline constexpr Index kFeatureGrid = 16;
/// Dimension of the fixed feature map phi.
inline constexpr Index kFeatureDim = 64;

/// How trial observations relate to the clean rates.
enum class NoiseKind {
  /// max(0, r + sigma * rbar * eps)
  gaussian,
  /// max(0, rbar + rbar * eps): responses carry no stimulus information.
  independent,
};

struct SyntheticDatasetSpec {
  Index stimuli = 118;
  Index channels = 1;
  Index neurons = 800;
  Index trials = 1;
  double noise_level = 0.0;
  std::uint64_t seed = 0;
  NoiseKind noise = NoiseKind::gaussian;
};

/// Known stimulus -> response map:
///   phi(M) = tanh(P (pool16(M) - 0.5)),  r(M) = softplus(W phi(M) + b).
/// P is (64, 256c), W is (n, 64), b is (n) and positive. Everything is drawn
/// from `seed`, so (seed, c, n) determines the model.
class ForwardModel {
 public:
  ForwardModel(std::uint64_t seed, Index channels, Index neurons, double noise_level = 0.0,
               NoiseKind noise = NoiseKind::gaussian);

  std::uint64_t seed() const { return seed_; }
  Index channels() const { return channels_; }
  Index neurons() const { return neurons_; }
  double noise_level() const { return noise_level_; }
  NoiseKind noise() const { return noise_; }

  Eigen::VectorXd features(std::span<const float> image) const;
  Eigen::VectorXd clean_rates(std::span<const float> image) const;
  /// Clean rates of every stimulus as an (S, n) matrix.
  Eigen::MatrixXd clean_rates(const StimulusSet& stimuli) const;

  const Eigen::MatrixXd& projection() const { return projection_; }
  const Eigen::MatrixXd& tuning() const { return tuning_; }
  const Eigen::VectorXd& baseline() const { return baseline_; }

  /// JSON description (seed, shapes, noise settings, neuron subset).
  std::string to_json(const std::vector<Index>& neuron_subset = {}) const;

 private:
  std::uint64_t seed_;
  Index channels_;
  Index neurons_;
  double noise_level_;
  NoiseKind noise_;
  Eigen::MatrixXd projection_;
  Eigen::MatrixXd tuning_;
  Eigen::VectorXd baseline_;
};

/// Forward model plus the neuron subset (empty: all neurons) recorded in a
/// dataset's forward-model blob.
struct ForwardModelRecord {
  ForwardModel model;
  std::vector<Index> neuron_subset;
};
ForwardModelRecord forward_model_from_json(const std::string& json);

/// S images (c,64,64): smooth background plus 3-6 oriented Gabor patches,
/// clipped to [0,1]. Image s depends only on (seed, s).
StimulusSet gen_stimuli(Index count, Index channels, std::uint64_t seed);

/// T noisy trials per stimulus; trial (s,t) depends only on the model seed
/// and (s,t).
ResponseSet gen_responses(const StimulusSet& stimuli, const ForwardModel& model, Index trials);

/// Sorted uniform subset of m of n neuron indices.
std::vector<Index> choose_neurons(Index neurons, Index keep, std::uint64_t seed);

/// Keeps `keep` neurons chosen by choose_neurons, preserving order.
ResponseSet subsample_neurons(const ResponseSet& responses, Index keep, std::uint64_t seed);
ResponseSet select_neurons(const ResponseSet& responses, const std::vector<Index>& neurons);

/// Stimuli, responses and splits for a spec, with the forward model stored
/// alongside.
DatasetContainer generate_dataset(const SyntheticDatasetSpec& spec, std::string id = "synthetic");

}  // namespace crossalign
