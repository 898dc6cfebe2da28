#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "crossalign/ops.hpp"

namespace crossalign {

inline constexpr Index kImageSize = 64;
inline constexpr Index kSpikeHidden = 512;
inline constexpr int kConvKernel = 4;
inline constexpr int kConvStride = 2;
inline constexpr int kConvPadding = 1;
/// Output channels of the visual encoder blocks, in order.
inline constexpr std::array<Index, 5> kVisualChannels{16, 32, 64, 128, 256};

/// Hyperparameters shared by every network in the toolkit.
struct NetworkOptions {
  double leaky_slope = 0.01;
  BatchNormOptions batchnorm{};
};

/// Whether a tensor is trained by the optimizer or is a running buffer.
enum class TensorRole { parameter, buffer };

/// conv(k4,s2,p1) -> batchnorm -> leaky_relu.
template <typename Scalar>
struct ConvBlock {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
  BatchNormParams<Scalar> norm;
};

struct VisualEncoderConfig {
  Index channels = 1;
  Index image_size = kImageSize;
  /// Number of conv blocks; 5 for the real network, fewer for probes.
  int blocks = 5;
  Index out_dim = 64;

  /// Side length of the final feature map.
  Index final_size() const { return image_size >> blocks; }
  Index flat_dim() const {
    return kVisualChannels[static_cast<std::size_t>(blocks - 1)] * final_size() * final_size();
  }
};

template <typename Scalar>
struct VisualEncoderParams {
  VisualEncoderConfig config;
  std::vector<ConvBlock<Scalar>> blocks;
  Tensor<Scalar> proj_weight;
  Tensor<Scalar> proj_bias;

  /// Calls fn(name, tensor, role) for every tensor in a fixed order.
  template <typename Fn>
  void for_each_tensor(const std::string& prefix, Fn&& fn) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = prefix + "block" + std::to_string(i) + ".";
      fn(p + "conv.weight", blocks[i].weight, TensorRole::parameter);
      fn(p + "conv.bias", blocks[i].bias, TensorRole::parameter);
      fn(p + "bn.gamma", blocks[i].norm.gamma, TensorRole::parameter);
      fn(p + "bn.beta", blocks[i].norm.beta, TensorRole::parameter);
      fn(p + "bn.running_mean", blocks[i].norm.running_mean, TensorRole::buffer);
      fn(p + "bn.running_var", blocks[i].norm.running_var, TensorRole::buffer);
    }
    fn(prefix + "proj.weight", proj_weight, TensorRole::parameter);
    fn(prefix + "proj.bias", proj_bias, TensorRole::parameter);
  }
};

template <typename Scalar>
struct SpikeEncoderParams {
  Index neurons = 0;
  Index hidden = kSpikeHidden;
  Index out_dim = 64;
  Tensor<Scalar> hidden_weight;
  Tensor<Scalar> hidden_bias;
  BatchNormParams<Scalar> norm;
  Tensor<Scalar> proj_weight;
  Tensor<Scalar> proj_bias;

  template <typename Fn>
  void for_each_tensor(const std::string& prefix, Fn&& fn) {
    fn(prefix + "hidden.weight", hidden_weight, TensorRole::parameter);
    fn(prefix + "hidden.bias", hidden_bias, TensorRole::parameter);
    fn(prefix + "bn.gamma", norm.gamma, TensorRole::parameter);
    fn(prefix + "bn.beta", norm.beta, TensorRole::parameter);
    fn(prefix + "bn.running_mean", norm.running_mean, TensorRole::buffer);
    fn(prefix + "bn.running_var", norm.running_var, TensorRole::buffer);
    fn(prefix + "proj.weight", proj_weight, TensorRole::parameter);
    fn(prefix + "proj.bias", proj_bias, TensorRole::parameter);
  }
};

/// The two alignment towers.
template <typename Scalar>
struct VnaParams {
  VisualEncoderParams<Scalar> visual;
  SpikeEncoderParams<Scalar> spike;

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    visual.for_each_tensor("visual.", fn);
    spike.for_each_tensor("spike.", fn);
  }
};

/// Bilinear resize with corner-aligned sampling of a (c,H,W) image to
/// (c,size,size). An input already at the target size is copied verbatim.
template <typename Scalar>
Tensor<Scalar> resize_image(const Tensor<Scalar>& image, Index size = kImageSize);

/// Tensor with entries uniform in +-sqrt(1/fan_in); requires grad.
template <typename Scalar>
Tensor<Scalar> uniform_init(Shape shape, Index fan_in, std::uint64_t seed);

/// Weights uniform in +-sqrt(1/fan_in), biases zero, batchnorm at identity.
template <typename Scalar>
VisualEncoderParams<Scalar> make_visual_encoder(const VisualEncoderConfig& config,
                                                std::uint64_t seed);

template <typename Scalar>
SpikeEncoderParams<Scalar> make_spike_encoder(Index neurons, Index out_dim, std::uint64_t seed,
                                              Index hidden = kSpikeHidden);

/// Both towers from one seed; c input channels, n neurons, latent dim d.
template <typename Scalar>
VnaParams<Scalar> init_params(std::uint64_t seed, Index c, Index n, Index d);

/// Visual tower: five conv blocks, flatten, linear projection. When
/// `block_shapes` is given it receives the output shape of every block.
template <typename Scalar>
Var<Scalar> visual_encode(VisualEncoderParams<Scalar>& params, Var<Scalar> images, Mode mode,
                          const NetworkOptions& options = {},
                          std::vector<Shape>* block_shapes = nullptr);

/// The visual trunk without the final projection: (B, flat_dim).
template <typename Scalar>
Var<Scalar> visual_features(VisualEncoderParams<Scalar>& params, Var<Scalar> images, Mode mode,
                            const NetworkOptions& options = {},
                            std::vector<Shape>* block_shapes = nullptr);

/// Spike tower: linear(n->512) -> batchnorm -> leaky_relu -> linear(512->d).
template <typename Scalar>
Var<Scalar> spike_encode(SpikeEncoderParams<Scalar>& params, Var<Scalar> spikes, Mode mode,
                         const NetworkOptions& options = {});

/// Eval-mode embeddings without gradient tracking. Eval mode never writes
/// to the parameters, so these may share params across threads.
template <typename Scalar>
Tensor<Scalar> embed_images(const VisualEncoderParams<Scalar>& params,
                            const Tensor<Scalar>& images, const NetworkOptions& options = {});
template <typename Scalar>
Tensor<Scalar> embed_spikes(const SpikeEncoderParams<Scalar>& params,
                            const Tensor<Scalar>& spikes, const NetworkOptions& options = {});

}  // namespace crossalign
