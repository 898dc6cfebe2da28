#include "crossalign/baselines.hpp"

#include <cmath>

namespace crossalign {

namespace {

// A single image given as (c,H,W) or (1,c,H,W) becomes a batch of one.
template <typename Scalar>
Tensor<Scalar> as_image_batch(const Tensor<Scalar>& image, Index channels, Index size) {
  const Shape& s = image.shape();
  const bool single = s == Shape{channels, size, size} || s == Shape{1, channels, size, size};
  if (!single) {
    throw ShapeError("expected one (" + std::to_string(channels) + "," + std::to_string(size) +
                     "," + std::to_string(size) + ") image, got " + to_string(s));
  }
  return image.reshaped({1, channels, size, size});
}

template <typename Scalar>
Tensor<Scalar> as_response_row(const Tensor<Scalar>& response, Index neurons) {
  if (response.size() != neurons || response.rank() > 2) {
    throw ShapeError("expected one response of " + std::to_string(neurons) + " neurons, got " +
                     to_string(response.shape()));
  }
  return response.reshaped({1, neurons});
}

template <typename Scalar>
Eigen::MatrixXd rows_of(const Tensor<Scalar>& t) {
  const Index rows = t.dim(0);
  return t.matrix(rows, t.size() / rows).template cast<double>();
}

}  // namespace

template <typename Scalar>
DirectEncoderParams<Scalar> make_direct_encoder(Index channels, Index neurons, std::uint64_t seed,
                                                int blocks, Index image_size) {
  VisualEncoderConfig config;
  config.channels = channels;
  config.out_dim = neurons;
  config.blocks = blocks;
  config.image_size = image_size;
  return {make_visual_encoder<Scalar>(config, seed)};
}

template <typename Scalar>
DirectDecoderParams<Scalar> make_direct_decoder(const DirectDecoderConfig& config,
                                                std::uint64_t seed) {
  if (config.blocks < 1 || config.blocks > static_cast<int>(kVisualChannels.size()) ||
      config.base_size() < 1 || (config.base_size() << config.blocks) != config.image_size) {
    throw ArgumentError("direct decoder: image size " + std::to_string(config.image_size) +
                        " is not a multiple of 2^" + std::to_string(config.blocks));
  }
  if (config.channels < 1 || config.neurons < 1) {
    throw ArgumentError("direct decoder: channels and neurons must be positive");
  }
  DirectDecoderParams<Scalar> p;
  p.config = config;
  p.trunk = make_spike_encoder<Scalar>(config.neurons, config.trunk_dim(), derive_seed(seed, 0));
  Index in = config.base_channels();
  for (int b = 0; b < config.blocks; ++b) {
    const Index out = config.block_channels(b);
    DeconvBlock<Scalar> block{
        uniform_init<Scalar>({in, out, kConvKernel, kConvKernel}, out * kConvKernel * kConvKernel,
                               derive_seed(seed, 1, static_cast<std::uint64_t>(b))),
        Tensor<Scalar>(Shape{out}, true), BatchNormParams<Scalar>(out)};
    block.norm.gamma.set_requires_grad(true);
    block.norm.beta.set_requires_grad(true);
    p.blocks.push_back(std::move(block));
    in = out;
  }
  return p;
}

template <typename Scalar>
Var<Scalar> direct_encode_predict(DirectEncoderParams<Scalar>& params, Var<Scalar> images,
                                  Mode mode, const NetworkOptions& options) {
  return visual_encode(params.net, images, mode, options);
}

template <typename Scalar>
Var<Scalar> direct_decode_predict(DirectDecoderParams<Scalar>& params, Var<Scalar> spikes,
                                  Mode mode, const NetworkOptions& options,
                                  std::vector<Shape>* block_shapes) {
  const auto& cfg = params.config;
  Graph<Scalar>& g = *spikes.graph;
  Var<Scalar> x = spike_encode(params.trunk, spikes, mode, options);
  x = reshape(x, Shape{x.dim(0), cfg.base_channels(), cfg.base_size(), cfg.base_size()});
  const Scalar slope = static_cast<Scalar>(options.leaky_slope);
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    auto& block = params.blocks[i];
    x = conv_transpose2d(x, g.leaf(block.weight), g.leaf(block.bias), kConvStride, kConvPadding);
    if (i + 1 < params.blocks.size()) {
      x = batchnorm(x, block.norm, mode, options.batchnorm);
      x = leaky_relu(x, slope);
    } else {
      x = sigmoid(x);
    }
    if (block_shapes) {
      block_shapes->push_back(x.shape());
    }
  }
  return x;
}

template <typename Scalar>
Tensor<Scalar> predict_responses(const DirectEncoderParams<Scalar>& params,
                                 const Tensor<Scalar>& images, const NetworkOptions& options) {
  return embed_images(params.net, images, options);
}

template <typename Scalar>
Tensor<Scalar> predict_images(const DirectDecoderParams<Scalar>& params,
                              const Tensor<Scalar>& spikes, const NetworkOptions& options) {
  Graph<Scalar> g(false);
  auto& p = const_cast<DirectDecoderParams<Scalar>&>(params);
  return direct_decode_predict(p, g.constant(spikes), Mode::eval, options).value();
}

template <typename Scalar>
Var<Scalar> mse_loss(Var<Scalar> prediction, Var<Scalar> target) {
  if (prediction.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + to_string(prediction.shape()) +
                     " and target " + to_string(target.shape()) + " differ");
  }
  return mean(square(sub(prediction, target)));
}

template <typename Scalar>
Eigen::VectorXd baseline_scores(const DirectEncoderParams<Scalar>& params, TaskMode mode,
                                const Tensor<Scalar>& query, const Tensor<Scalar>& candidates,
                                const NetworkOptions& options) {
  const auto& cfg = params.net.config;
  if (mode == TaskMode::encoding) {
    const Tensor<Scalar> predicted =
        predict_responses(params, as_image_batch(query, cfg.channels, cfg.image_size), options);
    if (candidates.rank() != 2) {
      throw ShapeError("direct-encode/encoding: candidates must be (K,n), got " +
                       to_string(candidates.shape()));
    }
    return negated_distances(rows_of(predicted).row(0), rows_of(candidates));
  }
  const Tensor<Scalar> response = as_response_row(query, params.neurons());
  if (candidates.rank() != 4) {
    throw ShapeError("direct-encode/decoding: candidates must be (K,c,H,W), got " +
                     to_string(candidates.shape()));
  }
  return negated_distances(rows_of(response).row(0),
                           rows_of(predict_responses(params, candidates, options)));
}

template <typename Scalar>
Eigen::VectorXd baseline_scores(const DirectDecoderParams<Scalar>& params, TaskMode mode,
                                const Tensor<Scalar>& query, const Tensor<Scalar>& candidates,
                                const NetworkOptions& options) {
  const auto& cfg = params.config;
  if (mode == TaskMode::encoding) {
    const Tensor<Scalar> image = as_image_batch(query, cfg.channels, cfg.image_size);
    if (candidates.rank() != 2) {
      throw ShapeError("direct-decode/encoding: candidates must be (K,n), got " +
                       to_string(candidates.shape()));
    }
    return negated_distances(rows_of(image).row(0),
                             rows_of(predict_images(params, candidates, options)));
  }
  const Tensor<Scalar> predicted =
      predict_images(params, as_response_row(query, cfg.neurons), options);
  if (candidates.rank() != 4) {
    throw ShapeError("direct-decode/decoding: candidates must be (K,c,H,W), got " +
                     to_string(candidates.shape()));
  }
  return negated_distances(rows_of(predicted).row(0), rows_of(candidates));
}

#define CROSSALIGN_INSTANTIATE_BASELINES(S)                                                      \
  template DirectEncoderParams<S> make_direct_encoder(Index, Index, std::uint64_t, int, Index); \
  template DirectDecoderParams<S> make_direct_decoder(const DirectDecoderConfig&, std::uint64_t); \
  template Var<S> direct_encode_predict(DirectEncoderParams<S>&, Var<S>, Mode,                   \
                                        const NetworkOptions&);                                  \
  template Var<S> direct_decode_predict(DirectDecoderParams<S>&, Var<S>, Mode,                   \
                                        const NetworkOptions&, std::vector<Shape>*);             \
  template Tensor<S> predict_responses(const DirectEncoderParams<S>&, const Tensor<S>&,          \
                                       const NetworkOptions&);                                   \
  template Tensor<S> predict_images(const DirectDecoderParams<S>&, const Tensor<S>&,             \
                                    const NetworkOptions&);                                      \
  template Var<S> mse_loss(Var<S>, Var<S>);                                                      \
  template Eigen::VectorXd baseline_scores(const DirectEncoderParams<S>&, TaskMode,              \
                                           const Tensor<S>&, const Tensor<S>&,                   \
                                           const NetworkOptions&);                               \
  template Eigen::VectorXd baseline_scores(const DirectDecoderParams<S>&, TaskMode,              \
                                           const Tensor<S>&, const Tensor<S>&,                   \
                                           const NetworkOptions&);

CROSSALIGN_INSTANTIATE_BASELINES(float)
CROSSALIGN_INSTANTIATE_BASELINES(double)

#undef CROSSALIGN_INSTANTIATE_BASELINES

}  // namespace crossalign
