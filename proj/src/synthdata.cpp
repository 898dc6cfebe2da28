#include "crossalign/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

namespace crossalign {

namespace {

constexpr double kProjectionGain = 4.0;
constexpr double kTuningGain = 2.0;

// Stream tags for derive_seed.
enum : std::uint64_t { kTagProjection = 1, kTagTuning, kTagBaseline, kTagTrial, kTagImage };

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

Eigen::MatrixXd gaussian_matrix(Index rows, Index cols, double scale, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      m(i, j) = scale * standard_normal(rng);
    }
  }
  return m;
}

std::string noise_name(NoiseKind kind) {
  return kind == NoiseKind::gaussian ? "gaussian" : "independent";
}

}  // namespace

ForwardModel::ForwardModel(std::uint64_t seed, Index channels, Index neurons, double noise_level,
                           NoiseKind noise)
    : seed_(seed),
      channels_(channels),
      neurons_(neurons),
      noise_level_(noise_level),
      noise_(noise) {
  if (channels < 1 || neurons < 1) {
    throw ArgumentError("forward model needs at least one channel and one neuron");
  }
  if (!(noise_level >= 0.0)) {
    throw ArgumentError("noise level must be >= 0");
  }
  const Index pooled = kFeatureGrid * kFeatureGrid * channels;
  projection_ = gaussian_matrix(kFeatureDim, pooled,
                                kProjectionGain / std::sqrt(static_cast<double>(pooled)),
                                derive_seed(seed, kTagProjection));
  tuning_ = gaussian_matrix(neurons, kFeatureDim,
                            kTuningGain / std::sqrt(static_cast<double>(kFeatureDim)),
                            derive_seed(seed, kTagTuning));
  Rng rng(derive_seed(seed, kTagBaseline));
  baseline_.resize(neurons);
  for (Index i = 0; i < neurons; ++i) {
    baseline_[i] = uniform(rng, 0.1, 1.0);
  }
}

Eigen::VectorXd ForwardModel::features(std::span<const float> image) const {
  const Index side = kImageSizeOnDisk, cell = side / kFeatureGrid;
  if (static_cast<Index>(image.size()) != channels_ * side * side) {
    throw ShapeError("forward model expects " + std::to_string(channels_) + "x64x64 images");
  }
  Eigen::VectorXd pooled(kFeatureGrid * kFeatureGrid * channels_);
  for (Index c = 0; c < channels_; ++c) {
    for (Index gy = 0; gy < kFeatureGrid; ++gy) {
      for (Index gx = 0; gx < kFeatureGrid; ++gx) {
        double acc = 0.0;
        for (Index y = 0; y < cell; ++y) {
          for (Index x = 0; x < cell; ++x) {
            acc += image[static_cast<std::size_t>((c * side + gy * cell + y) * side + gx * cell + x)];
          }
        }
        pooled[(c * kFeatureGrid + gy) * kFeatureGrid + gx] =
            acc / static_cast<double>(cell * cell) - 0.5;
      }
    }
  }
  return (projection_ * pooled).array().tanh().matrix();
}

Eigen::VectorXd ForwardModel::clean_rates(std::span<const float> image) const {
  const Eigen::VectorXd drive = tuning_ * features(image) + baseline_;
  return drive.unaryExpr([](double v) { return softplus(v); });
}

Eigen::MatrixXd ForwardModel::clean_rates(const StimulusSet& stimuli) const {
  Eigen::MatrixXd rates(stimuli.count, neurons_);
  for (Index s = 0; s < stimuli.count; ++s) {
    rates.row(s) = clean_rates(stimuli.image(s)).transpose();
  }
  return rates;
}

std::string ForwardModel::to_json(const std::vector<Index>& neuron_subset) const {
  nlohmann::json j = {{"kind", "tanh-projection-softplus"},
                      {"seed", seed_},
                      {"channels", channels_},
                      {"neurons", neurons_},
                      {"feature_grid", kFeatureGrid},
                      {"feature_dim", kFeatureDim},
                      {"noise_level", noise_level_},
                      {"noise", noise_name(noise_)},
                      {"neuron_subset", neuron_subset}};
  return j.dump(2) + "\n";
}

ForwardModelRecord forward_model_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const std::string noise = j.at("noise").get<std::string>();
    if (noise != "gaussian" && noise != "independent") {
      throw DataError("forward model: unknown noise kind '" + noise + "'");
    }
    ForwardModel model(j.at("seed").get<std::uint64_t>(), j.at("channels").get<Index>(),
                       j.at("neurons").get<Index>(), j.at("noise_level").get<double>(),
                       noise == "gaussian" ? NoiseKind::gaussian : NoiseKind::independent);
    return {std::move(model), j.at("neuron_subset").get<std::vector<Index>>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("forward model: ") + e.what());
  }
}

StimulusSet gen_stimuli(Index count, Index channels, std::uint64_t seed) {
  if (count < 1 || channels < 1) {
    throw ArgumentError("gen_stimuli: need at least one stimulus and one channel");
  }
  const Index side = kImageSizeOnDisk;
  StimulusSet set{count, channels, side,
                  std::vector<float>(static_cast<std::size_t>(count * channels * side * side))};
  std::vector<double> canvas(static_cast<std::size_t>(channels * side * side));
  for (Index s = 0; s < count; ++s) {
    Rng rng(derive_seed(seed, kTagImage, static_cast<std::uint64_t>(s)));
    // Background: level, linear gradient and one slow grating per image.
    const double level = uniform(rng, 0.3, 0.7);
    const double gx = uniform(rng, -0.2, 0.2), gy = uniform(rng, -0.2, 0.2);
    const double wave_amp = uniform(rng, 0.0, 0.1);
    const double wave_theta = uniform(rng, 0.0, std::numbers::pi);
    const double wave_freq = uniform(rng, 0.5, 2.0) * 2.0 * std::numbers::pi / static_cast<double>(side);
    const double wave_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    std::vector<double> tint(static_cast<std::size_t>(channels), 1.0);
    if (channels > 1) {
      for (double& t : tint) t = uniform(rng, 0.7, 1.3);
    }
    for (Index c = 0; c < channels; ++c) {
      for (Index y = 0; y < side; ++y) {
        for (Index x = 0; x < side; ++x) {
          const double u = static_cast<double>(x) / (side - 1) - 0.5;
          const double v = static_cast<double>(y) / (side - 1) - 0.5;
          const double along = x * std::cos(wave_theta) + y * std::sin(wave_theta);
          canvas[static_cast<std::size_t>((c * side + y) * side + x)] =
              tint[static_cast<std::size_t>(c)] *
              (level + gx * u + gy * v + wave_amp * std::sin(wave_freq * along + wave_phase));
        }
      }
    }
    const auto patches = 3 + static_cast<int>(uniform_index(rng, 4));
    for (int p = 0; p < patches; ++p) {
      const double cx = uniform(rng, 8.0, side - 8.0), cy = uniform(rng, 8.0, side - 8.0);
      const double sigma = uniform(rng, 4.0, 10.0);
      const double wavelength = uniform(rng, 6.0, 18.0);
      const double theta = uniform(rng, 0.0, std::numbers::pi);
      const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double amp = uniform(rng, 0.2, 0.45) * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
      std::vector<double> weight(static_cast<std::size_t>(channels), 1.0);
      if (channels > 1) {
        for (double& w : weight) w = uniform(rng, 0.3, 1.0);
      }
      const double ct = std::cos(theta), st = std::sin(theta);
      for (Index y = 0; y < side; ++y) {
        for (Index x = 0; x < side; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double envelope = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          if (envelope < 1e-4) continue;
          const double carrier = std::cos(2.0 * std::numbers::pi * (dx * ct + dy * st) / wavelength + phase);
          for (Index c = 0; c < channels; ++c) {
            canvas[static_cast<std::size_t>((c * side + y) * side + x)] +=
                amp * weight[static_cast<std::size_t>(c)] * envelope * carrier;
          }
        }
      }
    }
    auto out = set.image(s);
    for (std::size_t i = 0; i < canvas.size(); ++i) {
      out[i] = static_cast<float>(std::clamp(canvas[i], 0.0, 1.0));
    }
  }
  return set;
}

ResponseSet gen_responses(const StimulusSet& stimuli, const ForwardModel& model, Index trials) {
  if (stimuli.channels != model.channels()) {
    throw ShapeError("gen_responses: stimuli have " + std::to_string(stimuli.channels) +
                     " channels, forward model expects " + std::to_string(model.channels()));
  }
  if (trials < 1) {
    throw ArgumentError("gen_responses: need at least one trial");
  }
  const Index n = model.neurons();
  const Eigen::MatrixXd clean = model.clean_rates(stimuli);
  const Eigen::VectorXd mean_rate = clean.colwise().mean().transpose();
  ResponseSet out{stimuli.count, trials, n,
                  std::vector<float>(static_cast<std::size_t>(stimuli.count * trials * n))};
  for (Index s = 0; s < stimuli.count; ++s) {
    for (Index t = 0; t < trials; ++t) {
      Rng rng(derive_seed(model.seed(), kTagTrial, static_cast<std::uint64_t>(s),
                          static_cast<std::uint64_t>(t)));
      auto r = out.response(s, t);
      for (Index i = 0; i < n; ++i) {
        double value;
        if (model.noise() == NoiseKind::independent) {
          value = mean_rate[i] * (1.0 + standard_normal(rng));
        } else if (model.noise_level() == 0.0) {
          value = clean(s, i);
        } else {
          value = clean(s, i) + model.noise_level() * mean_rate[i] * standard_normal(rng);
        }
        r[static_cast<std::size_t>(i)] = static_cast<float>(std::max(0.0, value));
      }
    }
  }
  return out;
}

std::vector<Index> choose_neurons(Index neurons, Index keep, std::uint64_t seed) {
  if (keep < 1 || keep > neurons) {
    throw ArgumentError("subsample: keep " + std::to_string(keep) + " of " +
                        std::to_string(neurons) + " neurons is out of range");
  }
  std::vector<Index> order(static_cast<std::size_t>(neurons));
  for (Index i = 0; i < neurons; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0x5ab));
  // Partial Fisher-Yates: the first `keep` slots are a uniform subset.
  for (std::size_t i = 0; i < static_cast<std::size_t>(keep); ++i) {
    std::swap(order[i], order[i + uniform_index(rng, order.size() - i)]);
  }
  order.resize(static_cast<std::size_t>(keep));
  std::sort(order.begin(), order.end());
  return order;
}

ResponseSet select_neurons(const ResponseSet& responses, const std::vector<Index>& neurons) {
  const auto keep = static_cast<Index>(neurons.size());
  ResponseSet out{responses.stimuli, responses.trials, keep,
                  std::vector<float>(static_cast<std::size_t>(responses.stimuli *
                                                              responses.trials * keep))};
  for (Index s = 0; s < responses.stimuli; ++s) {
    for (Index t = 0; t < responses.trials; ++t) {
      const auto src = responses.response(s, t);
      auto dst = out.response(s, t);
      for (std::size_t k = 0; k < neurons.size(); ++k) {
        dst[k] = src[static_cast<std::size_t>(neurons[k])];
      }
    }
  }
  return out;
}

ResponseSet subsample_neurons(const ResponseSet& responses, Index keep, std::uint64_t seed) {
  return select_neurons(responses, choose_neurons(responses.neurons, keep, seed));
}

DatasetContainer generate_dataset(const SyntheticDatasetSpec& spec, std::string id) {
  if (spec.stimuli < 2 || spec.trials < 1 || spec.neurons < 1) {
    throw ArgumentError("synthetic dataset needs S >= 2, T >= 1 and n >= 1");
  }
  const ForwardModel model(derive_seed(spec.seed, 0xf0), spec.channels, spec.neurons,
                           spec.noise_level, spec.noise);
  StimulusSet stimuli = gen_stimuli(spec.stimuli, spec.channels, derive_seed(spec.seed, 0x57));
  ResponseSet responses = gen_responses(stimuli, model, spec.trials);
  return make_container(std::move(id), std::move(stimuli), std::move(responses), spec.seed, 0.2,
                        model.to_json());
}

}  // namespace crossalign
