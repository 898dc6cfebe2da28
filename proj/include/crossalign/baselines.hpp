#pragma once

#include <Eigen/Core>

#include "crossalign/encoders.hpp"

namespace crossalign {

/// Image -> response regressor: the visual trunk with its projection
/// retargeted to the neuron count.
template <typename Scalar>
struct DirectEncoderParams {
  VisualEncoderParams<Scalar> net;

  Index neurons() const { return net.config.out_dim; }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    net.for_each_tensor("encoder.", fn);
  }
};

struct DirectDecoderConfig {
  Index neurons = 1;
  Index channels = 1;
  Index image_size = kImageSize;
  /// Number of transposed-conv blocks; mirrors the visual encoder depth.
  int blocks = 5;

  Index base_size() const { return image_size >> blocks; }
  Index base_channels() const { return kVisualChannels[static_cast<std::size_t>(blocks - 1)]; }
  Index trunk_dim() const { return base_channels() * base_size() * base_size(); }
  /// Output channels of deconv block i.
  Index block_channels(int i) const {
    return i + 1 < blocks ? kVisualChannels[static_cast<std::size_t>(blocks - 2 - i)] : channels;
  }
};

/// transposed conv(k4,s2,p1); the norm is unused on the final block.
template <typename Scalar>
struct DeconvBlock {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
  BatchNormParams<Scalar> norm;
};

/// Response -> image regressor: spike trunk (n->512->1024), reshape to
/// (256,2,2), five transposed-conv blocks back to (c,64,64), sigmoid.
template <typename Scalar>
struct DirectDecoderParams {
  DirectDecoderConfig config;
  SpikeEncoderParams<Scalar> trunk;
  std::vector<DeconvBlock<Scalar>> blocks;

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    trunk.for_each_tensor("decoder.trunk.", fn);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "decoder.block" + std::to_string(i) + ".";
      fn(p + "deconv.weight", blocks[i].weight, TensorRole::parameter);
      fn(p + "deconv.bias", blocks[i].bias, TensorRole::parameter);
      if (i + 1 < blocks.size()) {
        fn(p + "bn.gamma", blocks[i].norm.gamma, TensorRole::parameter);
        fn(p + "bn.beta", blocks[i].norm.beta, TensorRole::parameter);
        fn(p + "bn.running_mean", blocks[i].norm.running_mean, TensorRole::buffer);
        fn(p + "bn.running_var", blocks[i].norm.running_var, TensorRole::buffer);
      }
    }
  }
};

template <typename Scalar>
DirectEncoderParams<Scalar> make_direct_encoder(Index channels, Index neurons, std::uint64_t seed,
                                                int blocks = 5, Index image_size = kImageSize);

template <typename Scalar>
DirectDecoderParams<Scalar> make_direct_decoder(const DirectDecoderConfig& config,
                                                std::uint64_t seed);

/// (B,c,64,64) -> (B,n).
template <typename Scalar>
Var<Scalar> direct_encode_predict(DirectEncoderParams<Scalar>& params, Var<Scalar> images,
                                  Mode mode, const NetworkOptions& options = {});

/// (B,n) -> (B,c,64,64) with values in [0,1].
template <typename Scalar>
Var<Scalar> direct_decode_predict(DirectDecoderParams<Scalar>& params, Var<Scalar> spikes,
                                  Mode mode, const NetworkOptions& options = {},
                                  std::vector<Shape>* block_shapes = nullptr);

/// Eval-mode predictions without gradient tracking.
template <typename Scalar>
Tensor<Scalar> predict_responses(const DirectEncoderParams<Scalar>& params,
                                 const Tensor<Scalar>& images, const NetworkOptions& options = {});
template <typename Scalar>
Tensor<Scalar> predict_images(const DirectDecoderParams<Scalar>& params,
                              const Tensor<Scalar>& spikes, const NetworkOptions& options = {});

/// Mean of squared differences over every element.
template <typename Scalar>
Var<Scalar> mse_loss(Var<Scalar> prediction, Var<Scalar> target);

/// -|query - row_i| for every candidate row; higher is better.
template <typename DerivedQ, typename DerivedC>
Eigen::VectorXd negated_distances(const Eigen::MatrixBase<DerivedQ>& query,
                                  const Eigen::MatrixBase<DerivedC>& candidates) {
  if (candidates.rows() == 0) {
    throw ArgumentError("negated_distances: empty candidate list");
  }
  if (candidates.cols() != query.size()) {
    throw ShapeError("negated_distances: query has dimension " + std::to_string(query.size()) +
                     " but candidates have " + std::to_string(candidates.cols()));
  }
  // Row or column queries alike; mixing orientations in one expression is
  // unchecked in release builds.
  const Eigen::RowVectorXd q = query.template cast<double>().reshaped().transpose();
  Eigen::VectorXd scores(candidates.rows());
  for (Index i = 0; i < candidates.rows(); ++i) {
    scores[i] = -(candidates.row(i).template cast<double>() - q).norm();
  }
  return scores;
}

/// Discriminative scores of the direct encoder f. Encoding: query is one
/// image (c,64,64), candidates are responses (K,n), score_j = -|f(M) - v_j|.
/// Decoding: query is one response (n), candidates are images (K,c,64,64),
/// score_i = -|f(M_i) - v|.
template <typename Scalar>
Eigen::VectorXd baseline_scores(const DirectEncoderParams<Scalar>& params, TaskMode mode,
                                const Tensor<Scalar>& query, const Tensor<Scalar>& candidates,
                                const NetworkOptions& options = {});

/// Discriminative scores of the direct decoder g. Encoding: query is one
/// image, candidates are responses, score_j = -|g(v_j) - M|. Decoding: query
/// is one response, candidates are images, score_i = -|g(v) - M_i|.
template <typename Scalar>
Eigen::VectorXd baseline_scores(const DirectDecoderParams<Scalar>& params, TaskMode mode,
                                const Tensor<Scalar>& query, const Tensor<Scalar>& candidates,
                                const NetworkOptions& options = {});

}  // namespace crossalign
