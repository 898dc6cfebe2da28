#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossalign/tensor.hpp"

namespace crossalign {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr double kStdFloor = 1e-6;
/// Stored images are always square at this side length.
inline constexpr Index kImageSizeOnDisk = 64;

/// S images of shape (c, 64, 64), row-major [S, c, 64, 64].
struct StimulusSet {
  Index count = 0;
  Index channels = 1;
  Index size = 64;
  std::vector<float> pixels;

  Index image_elements() const { return channels * size * size; }
  std::span<const float> image(Index s) const {
    return {pixels.data() + s * image_elements(), static_cast<std::size_t>(image_elements())};
  }
  std::span<float> image(Index s) {
    return {pixels.data() + s * image_elements(), static_cast<std::size_t>(image_elements())};
  }
  friend bool operator==(const StimulusSet&, const StimulusSet&) = default;
};

/// Non-negative firing rates, row-major [S, T, n].
struct ResponseSet {
  Index stimuli = 0;
  Index trials = 1;
  Index neurons = 1;
  std::vector<float> rates;

  std::span<const float> response(Index s, Index t) const {
    return {rates.data() + (s * trials + t) * neurons, static_cast<std::size_t>(neurons)};
  }
  std::span<float> response(Index s, Index t) {
    return {rates.data() + (s * trials + t) * neurons, static_cast<std::size_t>(neurons)};
  }
  friend bool operator==(const ResponseSet&, const ResponseSet&) = default;
};

/// One presentation: a stimulus and the trial on which it was recorded.
struct Presentation {
  Index stimulus = 0;
  Index trial = 0;
  friend auto operator<=>(const Presentation&, const Presentation&) = default;
};

struct Splits {
  std::vector<Index> train;
  std::vector<Index> test;
  friend bool operator==(const Splits&, const Splits&) = default;
};

/// Per-neuron train-split statistics used for z-scoring responses.
struct NeuronStats {
  std::vector<double> mean;
  std::vector<double> std;
  friend bool operator==(const NeuronStats&, const NeuronStats&) = default;
};

struct Manifest {
  int schema_version = kDatasetSchemaVersion;
  std::string id = "dataset";
  Index stimuli = 0;
  Index channels = 1;
  Index neurons = 1;
  Index trials = 1;
  std::string dtype = "float32";
  std::string byte_order = "little";
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  /// File name of the forward-model description, when one exists.
  std::optional<std::string> forward_model;
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

/// Everything stored in a dataset directory:
///   manifest.json, images.bin, responses.bin, splits.json, stats.json and
///   optionally forward_model.json.
struct DatasetContainer {
  Manifest manifest;
  StimulusSet stimuli;
  ResponseSet responses;
  Splits splits;
  NeuronStats stats;
  /// Opaque forward-model JSON text, written verbatim.
  std::optional<std::string> forward_model_json;
  friend bool operator==(const DatasetContainer&, const DatasetContainer&) = default;
};

/// Throws DataError when manifest, blobs, splits and stats disagree.
void validate(const DatasetContainer& container);

/// Writes every file via write-to-temp-then-rename.
void write_dataset(const DatasetContainer& container, const std::filesystem::path& dir);

/// Validates blob byte lengths against the manifest before reading any
/// array; rejects unknown schema versions and non-finite values.
DatasetContainer read_dataset(const std::filesystem::path& dir);

/// Seeded split: floor(S * test_fraction) test items, the rest train; both
/// lists sorted.
Splits split_dataset(Index stimuli, double test_fraction, std::uint64_t seed);

/// Population mean/std per neuron over the train stimuli and all trials;
/// std is floored at kStdFloor.
NeuronStats compute_stats(const ResponseSet& responses, std::span<const Index> train);

/// Assembles a container from generated parts: splits, stats and manifest.
DatasetContainer make_container(std::string id, StimulusSet stimuli, ResponseSet responses,
                                std::uint64_t seed, double test_fraction = 0.2,
                                std::optional<std::string> forward_model_json = std::nullopt);

/// Images of the listed stimuli as a (B, c, 64, 64) tensor.
template <typename Scalar>
Tensor<Scalar> gather_images(const StimulusSet& stimuli, std::span<const Index> ids);

/// Z-scored responses of the listed presentations as a (B, n) tensor.
template <typename Scalar>
Tensor<Scalar> gather_responses(const ResponseSet& responses, const NeuronStats& stats,
                                std::span<const Presentation> ids);

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// Training/evaluation configuration.
struct RunConfig {
  Method method = Method::vna;
  Index latent_dim = 64;
  Index batch_size = 256;
  Index candidates = 400;
  double learning_rate = 0.01;
  Index epochs = 100;
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 0;
  std::string data;
  /// Divides the contrastive logits; 1 keeps the plain cosine softmax.
  double temperature = 1.0;
  /// Keep this many neurons (0 keeps all), chosen with subsample_seed.
  Index subsample = 0;
  std::uint64_t subsample_seed = 0;
  /// Regenerate responses at this noise level (needs a forward model).
  std::optional<double> noise;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

std::string run_config_to_json(const RunConfig& config);
/// Overlays the keys present in `json` on `base`; unknown keys are errors.
RunConfig run_config_from_json(const std::string& json, RunConfig base = {});

}  // namespace crossalign
