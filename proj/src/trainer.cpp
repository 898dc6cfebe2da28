#include "crossalign/trainer.hpp"

#include <chrono>
#include <cmath>

#include <json.hpp>

#include "crossalign/alignment.hpp"

namespace crossalign {

namespace {

enum : std::uint64_t { kTagInit = 0x1a17, kTagEpoch = 0xe90c };

template <typename Scalar>
ModelParams<Scalar> make_model(const RunConfig& config, const DatasetContainer& data) {
  const Index c = data.stimuli.channels, n = data.responses.neurons;
  const std::uint64_t seed = derive_seed(config.seed, kTagInit);
  switch (config.method) {
    case Method::vna:
      return init_params<Scalar>(seed, c, n, config.latent_dim);
    case Method::direct_encode:
      return make_direct_encoder<Scalar>(c, n, seed);
    case Method::direct_decode:
      return make_direct_decoder<Scalar>(DirectDecoderConfig{n, c}, seed);
  }
  throw ArgumentError("unknown method");
}

template <typename Scalar>
Var<Scalar> batch_loss(ModelParams<Scalar>& model, Graph<Scalar>& g, const DatasetContainer& data,
                       std::span<const Presentation> batch, const RunConfig& config) {
  std::vector<Index> stimuli;
  stimuli.reserve(batch.size());
  for (const auto& p : batch) stimuli.push_back(p.stimulus);
  const Tensor<Scalar> images = gather_images<Scalar>(data.stimuli, stimuli);
  const Tensor<Scalar> responses = gather_responses<Scalar>(data.responses, data.stats, batch);
  if (auto* vna = std::get_if<VnaParams<Scalar>>(&model)) {
    const auto f = visual_encode(vna->visual, g.constant(images), Mode::train);
    const auto s = spike_encode(vna->spike, g.constant(responses), Mode::train);
    return contrastive_loss(similarity_matrix(f, s), config.temperature);
  }
  if (auto* enc = std::get_if<DirectEncoderParams<Scalar>>(&model)) {
    return mse_loss(direct_encode_predict(*enc, g.constant(images), Mode::train),
                    g.constant(responses));
  }
  auto& dec = std::get<DirectDecoderParams<Scalar>>(model);
  return mse_loss(direct_decode_predict(dec, g.constant(responses), Mode::train),
                  g.constant(images));
}

}  // namespace

template <typename Scalar>
void adam_step(std::span<const ParamRef<Scalar>> params, AdamState<Scalar>& state) {
  for (const auto& p : params) {
    if (!p.tensor->requires_grad()) {
      throw ArgumentError("adam_step: parameter '" + p.name + "' has no gradient buffer");
    }
    if (!p.tensor->grad().allFinite()) {
      throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor<Scalar>::Array::Zero(p.tensor->size()));
      state.v.push_back(Tensor<Scalar>::Array::Zero(p.tensor->size()));
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer tracks " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor->size()) {
      throw ShapeError("adam_step: moment shape mismatch for '" + params[i].name + "'");
    }
  }
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(o.beta1), b2 = static_cast<Scalar>(o.beta2);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(o.beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(o.beta2, t));
  const auto lr = static_cast<Scalar>(o.learning_rate), eps = static_cast<Scalar>(o.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i].tensor->grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    params[i].tensor->data() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

template <typename Scalar>
std::vector<ParamRef<Scalar>> parameter_refs(ModelParams<Scalar>& params) {
  std::vector<ParamRef<Scalar>> refs;
  for_each_tensor(params, [&](const std::string& name, Tensor<Scalar>& t, TensorRole role) {
    if (role == TensorRole::parameter) refs.push_back({name, &t});
  });
  return refs;
}

std::vector<Presentation> presentations_of(std::span<const Index> stimuli, Index trials) {
  std::vector<Presentation> out;
  out.reserve(stimuli.size() * static_cast<std::size_t>(trials));
  for (Index s : stimuli) {
    for (Index t = 0; t < trials; ++t) out.push_back({s, t});
  }
  return out;
}

std::vector<Presentation> epoch_order(std::span<const Presentation> examples, std::uint64_t seed,
                                      Index epoch) {
  std::vector<Presentation> order(examples.begin(), examples.end());
  Rng rng(derive_seed(seed, kTagEpoch, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(rng, i)]);
  }
  return order;
}

template <typename Scalar>
TrainState<Scalar> init_training(const RunConfig& config, const DatasetContainer& data) {
  if (config.batch_size < 1) throw ArgumentError("batch size must be positive");
  if (config.epochs < 0) throw ArgumentError("epochs must be >= 0");
  if (config.latent_dim < 1) throw ArgumentError("latent dimension must be positive");
  if (!(config.learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
  if (!(config.temperature > 0.0)) throw ArgumentError("temperature must be positive");
  if (data.splits.train.empty()) throw DataError("dataset has an empty train split");

  TrainState<Scalar> state{config, make_model<Scalar>(config, data), {}, {}, 0};
  state.adam.options.learning_rate = config.learning_rate;
  state.history.seed = config.seed;
  state.history.config = config;

  const auto examples =
      static_cast<Index>(data.splits.train.size()) * data.responses.trials;
  Index batch = config.batch_size;
  if (config.method == Method::vna && batch > examples) {
    warn("batch size " + std::to_string(batch) + " exceeds the " + std::to_string(examples) +
         " training presentations; using " + std::to_string(examples));
    batch = examples;
  }
  if (batch < 2) {
    throw ArgumentError("training needs batches of at least 2 presentations (batchnorm)");
  }
  state.history.batch_size = batch;
  return state;
}

template <typename Scalar>
void train_until(TrainState<Scalar>& state, const DatasetContainer& data, Index until) {
  const auto start = std::chrono::steady_clock::now();
  const auto examples = presentations_of(data.splits.train, data.responses.trials);
  const auto N = static_cast<std::size_t>(state.history.batch_size);
  const bool contrastive = state.config.method == Method::vna;
  auto refs = parameter_refs(state.params);

  for (; state.epoch < until; ++state.epoch) {
    const auto order = epoch_order(examples, state.config.seed, state.epoch);
    double loss_sum = 0.0;
    Index batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += N) {
      const std::size_t size = std::min(N, order.size() - begin);
      // The contrastive loss depends on N, so short batches are dropped. The
      // regression losses keep them unless batchnorm cannot handle them.
      if (size < N && (contrastive || size < 2)) break;
      for (auto& r : refs) r.tensor->zero_grad();
      Graph<Scalar> g;
      const auto loss = batch_loss(state.params, g, data,
                                   std::span<const Presentation>(order).subspan(begin, size),
                                   state.config);
      const double value = static_cast<double>(loss.value().item());
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss in epoch " + std::to_string(state.epoch));
      }
      g.backward(loss);
      adam_step<Scalar>(refs, state.adam);
      loss_sum += value;
      ++batches;
    }
    state.history.epoch_loss.push_back(batches > 0 ? loss_sum / static_cast<double>(batches)
                                                   : 0.0);
  }
  state.history.wall_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <typename Scalar>
TrainState<Scalar> train(const RunConfig& config, const DatasetContainer& data) {
  auto state = init_training<Scalar>(config, data);
  train_until(state, data, config.epochs);
  return state;
}

std::string history_to_json(const TrainHistory& h) {
  nlohmann::ordered_json j = {{"epochs", h.epoch_loss.size()},
                              {"epoch_loss", h.epoch_loss},
                              {"wall_seconds", h.wall_seconds},
                              {"seed", h.seed},
                              {"batch_size", h.batch_size},
                              {"config", nlohmann::ordered_json::parse(run_config_to_json(h.config))}};
  return j.dump(2) + "\n";
}

#define CROSSALIGN_INSTANTIATE_TRAINER(S)                                                   \
  template void adam_step(std::span<const ParamRef<S>>, AdamState<S>&);                     \
  template std::vector<ParamRef<S>> parameter_refs(ModelParams<S>&);                        \
  template TrainState<S> init_training(const RunConfig&, const DatasetContainer&);          \
  template void train_until(TrainState<S>&, const DatasetContainer&, Index);                \
  template TrainState<S> train(const RunConfig&, const DatasetContainer&);

CROSSALIGN_INSTANTIATE_TRAINER(float)
CROSSALIGN_INSTANTIATE_TRAINER(double)

#undef CROSSALIGN_INSTANTIATE_TRAINER

}  // namespace crossalign
