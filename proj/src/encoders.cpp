#include "crossalign/encoders.hpp"

#include <algorithm>
#include <cmath>

namespace crossalign {

namespace {

template <typename Scalar>
void mark_trainable(BatchNormParams<Scalar>& norm) {
  norm.gamma.set_requires_grad(true);
  norm.beta.set_requires_grad(true);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> uniform_init(Shape shape, Index fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  Tensor<Scalar> t(std::move(shape), true);
  for (Index i = 0; i < t.size(); ++i) {
    t[i] = static_cast<Scalar>(uniform(rng, -bound, bound));
  }
  return t;
}

template <typename Scalar>
Tensor<Scalar> resize_image(const Tensor<Scalar>& image, Index size) {
  if (image.rank() != 3) {
    throw ShapeError("resize_image: expected (c,H,W), got " + to_string(image.shape()));
  }
  if (size < 1) {
    throw ArgumentError("resize_image: target size must be positive");
  }
  const Index channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  if (height < 1 || width < 1) {
    throw ShapeError("resize_image: empty image " + to_string(image.shape()));
  }
  if (height == size && width == size) {
    return image;
  }
  auto sample_scale = [size](Index in) {
    return size > 1 ? static_cast<double>(in - 1) / static_cast<double>(size - 1) : 0.0;
  };
  const double sy = sample_scale(height), sx = sample_scale(width);
  Tensor<Scalar> out(Shape{channels, size, size});
  for (Index c = 0; c < channels; ++c) {
    const Scalar* src = image.raw() + c * height * width;
    Scalar* dst = out.raw() + c * size * size;
    for (Index i = 0; i < size; ++i) {
      const double fy_pos = static_cast<double>(i) * sy;
      const Index y0 = std::min(static_cast<Index>(fy_pos), height - 1);
      const Index y1 = std::min(y0 + 1, height - 1);
      const double fy = fy_pos - static_cast<double>(y0);
      for (Index j = 0; j < size; ++j) {
        const double fx_pos = static_cast<double>(j) * sx;
        const Index x0 = std::min(static_cast<Index>(fx_pos), width - 1);
        const Index x1 = std::min(x0 + 1, width - 1);
        const double fx = fx_pos - static_cast<double>(x0);
        const double a = src[y0 * width + x0], b = src[y0 * width + x1];
        const double p = src[y1 * width + x0], q = src[y1 * width + x1];
        const double v = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * p + fx * q);
        // Keep the result inside the hull of the four taps despite rounding.
        const double lo = std::min({a, b, p, q}), hi = std::max({a, b, p, q});
        dst[i * size + j] = static_cast<Scalar>(std::clamp(v, lo, hi));
      }
    }
  }
  return out;
}

template <typename Scalar>
VisualEncoderParams<Scalar> make_visual_encoder(const VisualEncoderConfig& config,
                                                std::uint64_t seed) {
  if (config.blocks < 1 || config.blocks > static_cast<int>(kVisualChannels.size())) {
    throw ArgumentError("visual encoder needs between 1 and 5 blocks");
  }
  if (config.channels < 1 || config.out_dim < 1 || config.final_size() < 1 ||
      (config.final_size() << config.blocks) != config.image_size) {
    throw ArgumentError("visual encoder: image size " + std::to_string(config.image_size) +
                        " is not divisible by 2^" + std::to_string(config.blocks));
  }
  VisualEncoderParams<Scalar> p;
  p.config = config;
  Index in = config.channels;
  std::uint64_t tag = 0;
  for (int b = 0; b < config.blocks; ++b) {
    const Index out = kVisualChannels[static_cast<std::size_t>(b)];
    const Index fan_in = in * kConvKernel * kConvKernel;
    ConvBlock<Scalar> block{
        uniform_init<Scalar>({out, in, kConvKernel, kConvKernel}, fan_in, derive_seed(seed, tag++)),
        Tensor<Scalar>(Shape{out}, true), BatchNormParams<Scalar>(out)};
    mark_trainable(block.norm);
    p.blocks.push_back(std::move(block));
    in = out;
  }
  p.proj_weight = uniform_init<Scalar>({config.out_dim, config.flat_dim()}, config.flat_dim(),
                                         derive_seed(seed, tag++));
  p.proj_bias = Tensor<Scalar>(Shape{config.out_dim}, true);
  return p;
}

template <typename Scalar>
SpikeEncoderParams<Scalar> make_spike_encoder(Index neurons, Index out_dim, std::uint64_t seed,
                                              Index hidden) {
  if (neurons < 1 || out_dim < 1 || hidden < 1) {
    throw ArgumentError("spike encoder dimensions must be positive");
  }
  SpikeEncoderParams<Scalar> p;
  p.neurons = neurons;
  p.hidden = hidden;
  p.out_dim = out_dim;
  p.hidden_weight = uniform_init<Scalar>({hidden, neurons}, neurons, derive_seed(seed, 0));
  p.hidden_bias = Tensor<Scalar>(Shape{hidden}, true);
  p.norm = BatchNormParams<Scalar>(hidden);
  mark_trainable(p.norm);
  p.proj_weight = uniform_init<Scalar>({out_dim, hidden}, hidden, derive_seed(seed, 1));
  p.proj_bias = Tensor<Scalar>(Shape{out_dim}, true);
  return p;
}

template <typename Scalar>
VnaParams<Scalar> init_params(std::uint64_t seed, Index c, Index n, Index d) {
  VisualEncoderConfig config;
  config.channels = c;
  config.out_dim = d;
  return {make_visual_encoder<Scalar>(config, derive_seed(seed, 1)),
          make_spike_encoder<Scalar>(n, d, derive_seed(seed, 2))};
}

template <typename Scalar>
Var<Scalar> visual_features(VisualEncoderParams<Scalar>& params, Var<Scalar> images, Mode mode,
                            const NetworkOptions& options, std::vector<Shape>* block_shapes) {
  const auto& cfg = params.config;
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != cfg.channels || s[2] != cfg.image_size || s[3] != cfg.image_size) {
    throw ShapeError("visual encoder expects (B," + std::to_string(cfg.channels) + "," +
                     std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                     "), got " + to_string(s));
  }
  Graph<Scalar>& g = *images.graph;
  const Scalar slope = static_cast<Scalar>(options.leaky_slope);
  Var<Scalar> x = images;
  for (auto& block : params.blocks) {
    x = conv2d(x, g.leaf(block.weight), g.leaf(block.bias), kConvStride, kConvPadding);
    x = batchnorm(x, block.norm, mode, options.batchnorm);
    x = leaky_relu(x, slope);
    if (block_shapes) {
      block_shapes->push_back(x.shape());
    }
  }
  return flatten(x);
}

template <typename Scalar>
Var<Scalar> visual_encode(VisualEncoderParams<Scalar>& params, Var<Scalar> images, Mode mode,
                          const NetworkOptions& options, std::vector<Shape>* block_shapes) {
  Graph<Scalar>& g = *images.graph;
  Var<Scalar> features = visual_features(params, images, mode, options, block_shapes);
  return linear(features, g.leaf(params.proj_weight), g.leaf(params.proj_bias));
}

template <typename Scalar>
Var<Scalar> spike_encode(SpikeEncoderParams<Scalar>& params, Var<Scalar> spikes, Mode mode,
                         const NetworkOptions& options) {
  if (spikes.value().rank() != 2 || spikes.dim(1) != params.neurons) {
    throw ShapeError("spike encoder expects (B," + std::to_string(params.neurons) + "), got " +
                     to_string(spikes.shape()));
  }
  Graph<Scalar>& g = *spikes.graph;
  Var<Scalar> h = linear(spikes, g.leaf(params.hidden_weight), g.leaf(params.hidden_bias));
  h = batchnorm(h, params.norm, mode, options.batchnorm);
  h = leaky_relu(h, static_cast<Scalar>(options.leaky_slope));
  return linear(h, g.leaf(params.proj_weight), g.leaf(params.proj_bias));
}

template <typename Scalar>
Tensor<Scalar> embed_images(const VisualEncoderParams<Scalar>& params,
                            const Tensor<Scalar>& images, const NetworkOptions& options) {
  Graph<Scalar> g(false);
  auto& p = const_cast<VisualEncoderParams<Scalar>&>(params);
  return visual_encode(p, g.constant(images), Mode::eval, options).value();
}

template <typename Scalar>
Tensor<Scalar> embed_spikes(const SpikeEncoderParams<Scalar>& params,
                            const Tensor<Scalar>& spikes, const NetworkOptions& options) {
  Graph<Scalar> g(false);
  auto& p = const_cast<SpikeEncoderParams<Scalar>&>(params);
  return spike_encode(p, g.constant(spikes), Mode::eval, options).value();
}

#define CROSSALIGN_INSTANTIATE_ENCODERS(S)                                                      \
  template Tensor<S> uniform_init(Shape, Index, std::uint64_t);                                 \
  template Tensor<S> resize_image(const Tensor<S>&, Index);                                     \
  template VisualEncoderParams<S> make_visual_encoder(const VisualEncoderConfig&, std::uint64_t); \
  template SpikeEncoderParams<S> make_spike_encoder(Index, Index, std::uint64_t, Index);        \
  template VnaParams<S> init_params(std::uint64_t, Index, Index, Index);                        \
  template Var<S> visual_features(VisualEncoderParams<S>&, Var<S>, Mode, const NetworkOptions&, \
                                  std::vector<Shape>*);                                         \
  template Var<S> visual_encode(VisualEncoderParams<S>&, Var<S>, Mode, const NetworkOptions&,   \
                                std::vector<Shape>*);                                           \
  template Var<S> spike_encode(SpikeEncoderParams<S>&, Var<S>, Mode, const NetworkOptions&);    \
  template Tensor<S> embed_images(const VisualEncoderParams<S>&, const Tensor<S>&,              \
                                  const NetworkOptions&);                                       \
  template Tensor<S> embed_spikes(const SpikeEncoderParams<S>&, const Tensor<S>&,               \
                                  const NetworkOptions&);

CROSSALIGN_INSTANTIATE_ENCODERS(float)
CROSSALIGN_INSTANTIATE_ENCODERS(double)

#undef CROSSALIGN_INSTANTIATE_ENCODERS

}  // namespace crossalign
