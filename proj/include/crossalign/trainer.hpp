#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "crossalign/baselines.hpp"
#include "crossalign/dataio.hpp"

namespace crossalign {

/// Scalar type used by the command-line tool for training and evaluation.
#if defined(CROSSALIGN_TRAIN_FLOAT) && CROSSALIGN_TRAIN_FLOAT
using TrainScalar = float;
#else
using TrainScalar = double;
#endif

struct AdamOptions {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  friend bool operator==(const AdamOptions&, const AdamOptions&) = default;
};

/// Named handle to a trainable tensor; the gradient is read from
/// tensor->grad().
template <typename Scalar>
struct ParamRef {
  std::string name;
  Tensor<Scalar>* tensor = nullptr;
};

template <typename Scalar>
struct AdamState {
  using Array = typename Tensor<Scalar>::Array;
  AdamOptions options;
  std::int64_t step = 0;
  /// Moments in parameter order; empty until the first step.
  std::vector<Array> m;
  std::vector<Array> v;
};

/// One Adam update of every parameter from its gradient:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// Throws NumericError naming the first parameter with a non-finite
/// gradient; nothing is modified in that case.
template <typename Scalar>
void adam_step(std::span<const ParamRef<Scalar>> params, AdamState<Scalar>& state);

template <typename Scalar>
using ModelParams =
    std::variant<VnaParams<Scalar>, DirectEncoderParams<Scalar>, DirectDecoderParams<Scalar>>;

template <typename Scalar>
Method method_of(const ModelParams<Scalar>& params) {
  return static_cast<Method>(params.index());
}

/// Every tensor of a model: fn(name, tensor, role), in checkpoint order.
template <typename Scalar, typename Fn>
void for_each_tensor(ModelParams<Scalar>& params, Fn&& fn) {
  std::visit([&](auto& p) { p.for_each_tensor(fn); }, params);
}

/// The trainable parameters of a model, in checkpoint order.
template <typename Scalar>
std::vector<ParamRef<Scalar>> parameter_refs(ModelParams<Scalar>& params);

struct TrainHistory {
  std::vector<double> epoch_loss;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  /// Batch size actually used (after clamping).
  Index batch_size = 0;
  RunConfig config;
};

/// Everything needed to continue training: model, optimizer and history.
template <typename Scalar>
struct TrainState {
  RunConfig config;
  ModelParams<Scalar> params;
  AdamState<Scalar> adam;
  TrainHistory history;
  /// Number of completed epochs.
  Index epoch = 0;
};

/// Fresh model for config.method sized to the dataset, initialised from
/// config.seed.
template <typename Scalar>
TrainState<Scalar> init_training(const RunConfig& config, const DatasetContainer& data);

/// Runs epochs state.epoch .. until-1. Epoch e shuffles the training
/// presentations with a seed derived from (config.seed, e) alone, so
/// resuming from a checkpoint replays a straight run exactly.
template <typename Scalar>
void train_until(TrainState<Scalar>& state, const DatasetContainer& data, Index until);

/// init_training followed by config.epochs epochs.
template <typename Scalar>
TrainState<Scalar> train(const RunConfig& config, const DatasetContainer& data);

/// All (stimulus, trial) pairs of the listed stimuli.
std::vector<Presentation> presentations_of(std::span<const Index> stimuli, Index trials);

/// Presentation order of epoch `epoch`.
std::vector<Presentation> epoch_order(std::span<const Presentation> examples, std::uint64_t seed,
                                      Index epoch);

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'X', 'A', 'L', 'N', 'C', 'K', 'P', 'T'};

/// Layout: 8-byte magic, little-endian uint64 length L, L bytes of JSON
/// metadata, then little-endian tensor blobs at the offsets the metadata
/// lists (relative to the end of the JSON).
template <typename Scalar>
void save_checkpoint(const TrainState<Scalar>& state, const std::filesystem::path& path);

/// Rejects other versions, other scalar types and, when `expected` is given,
/// checkpoints of a different method.
template <typename Scalar>
TrainState<Scalar> load_checkpoint(const std::filesystem::path& path,
                                   std::optional<Method> expected = std::nullopt);

/// Method tag of a checkpoint without loading its tensors.
Method checkpoint_method(const std::filesystem::path& path);

std::string history_to_json(const TrainHistory& history);

}  // namespace crossalign
