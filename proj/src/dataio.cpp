#include "crossalign/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace crossalign {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kImagesFile = "images.bin";
constexpr const char* kResponsesFile = "responses.bin";
constexpr const char* kSplitsFile = "splits.json";
constexpr const char* kStatsFile = "stats.json";

std::string encode_floats(const std::vector<float>& values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) {
      bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
  }
  return bytes;
}

std::vector<float> decode_floats(const std::string& bytes, const std::string& what) {
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + static_cast<std::size_t>(b)]))
              << (8 * b);
    }
    values[i] = std::bit_cast<float>(bits);
    if (!std::isfinite(values[i])) {
      throw DataError(what + ": non-finite value at element " + std::to_string(i));
    }
  }
  return values;
}

json manifest_to_json(const Manifest& m) {
  json j = {{"schema_version", m.schema_version},
            {"id", m.id},
            {"stimuli", m.stimuli},
            {"channels", m.channels},
            {"image_size", kImageSizeOnDisk},
            {"neurons", m.neurons},
            {"trials", m.trials},
            {"dtype", m.dtype},
            {"byte_order", m.byte_order},
            {"seed", m.seed},
            {"test_fraction", m.test_fraction},
            {"split_seed", m.split_seed}};
  j["forward_model"] = m.forward_model ? json(*m.forward_model) : json(nullptr);
  return j;
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) {
    throw DataError(where + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(where + ": bad field '" + key + "': " + e.what());
  }
}

Manifest manifest_from_json(const json& j) {
  const std::string where = kManifestFile;
  Manifest m;
  m.schema_version = field<int>(j, "schema_version", where);
  if (m.schema_version != kDatasetSchemaVersion) {
    throw DataError(where + ": unknown schema version " + std::to_string(m.schema_version) +
                    " (supported: " + std::to_string(kDatasetSchemaVersion) + ")");
  }
  m.id = field<std::string>(j, "id", where);
  m.stimuli = field<Index>(j, "stimuli", where);
  m.channels = field<Index>(j, "channels", where);
  m.neurons = field<Index>(j, "neurons", where);
  m.trials = field<Index>(j, "trials", where);
  m.dtype = field<std::string>(j, "dtype", where);
  m.byte_order = field<std::string>(j, "byte_order", where);
  m.seed = field<std::uint64_t>(j, "seed", where);
  m.test_fraction = field<double>(j, "test_fraction", where);
  m.split_seed = field<std::uint64_t>(j, "split_seed", where);
  if (j.contains("image_size") && field<Index>(j, "image_size", where) != kImageSizeOnDisk) {
    throw DataError(where + ": image_size must be " + std::to_string(kImageSizeOnDisk));
  }
  if (j.contains("forward_model") && !j.at("forward_model").is_null()) {
    m.forward_model = field<std::string>(j, "forward_model", where);
  }
  if (m.dtype != "float32" || m.byte_order != "little") {
    throw DataError(where + ": unsupported dtype/byte order " + m.dtype + "/" + m.byte_order);
  }
  if (m.stimuli < 1 || m.channels < 1 || m.neurons < 1 || m.trials < 1) {
    throw DataError(where + ": stimuli, channels, neurons and trials must be positive");
  }
  return m;
}

json parse_json(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(where + ": invalid JSON: " + e.what());
  }
}

void check_blob_size(const fs::path& path, std::uintmax_t expected) {
  std::error_code ec;
  const std::uintmax_t actual = fs::file_size(path, ec);
  if (ec) {
    throw DataError(path.string() + ": cannot stat: " + ec.message());
  }
  if (actual != expected) {
    throw DataError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                    std::to_string(actual));
  }
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw DataError(tmp.string() + ": cannot open for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw DataError(tmp.string() + ": write failed");
    }
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(path.string() + ": cannot open");
  }
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void validate(const DatasetContainer& c) {
  const Manifest& m = c.manifest;
  const auto expect = [](bool ok, const std::string& msg) {
    if (!ok) throw DataError(msg);
  };
  expect(m.schema_version == kDatasetSchemaVersion, "unknown schema version");
  expect(c.stimuli.count == m.stimuli && c.stimuli.channels == m.channels &&
             c.stimuli.size == kImageSizeOnDisk,
         "stimulus set does not match the manifest shape");
  expect(c.stimuli.pixels.size() ==
             static_cast<std::size_t>(m.stimuli * m.channels * kImageSizeOnDisk * kImageSizeOnDisk),
         "images: expected " + std::to_string(m.stimuli * m.channels * kImageSizeOnDisk * kImageSizeOnDisk) +
             " values, found " + std::to_string(c.stimuli.pixels.size()));
  expect(c.responses.stimuli == m.stimuli && c.responses.trials == m.trials &&
             c.responses.neurons == m.neurons,
         "response set does not match the manifest shape");
  expect(c.responses.rates.size() == static_cast<std::size_t>(m.stimuli * m.trials * m.neurons),
         "responses: expected " + std::to_string(m.stimuli * m.trials * m.neurons) +
             " values, found " + std::to_string(c.responses.rates.size()));
  std::vector<char> seen(static_cast<std::size_t>(m.stimuli), 0);
  for (const auto* list : {&c.splits.train, &c.splits.test}) {
    for (Index s : *list) {
      expect(s >= 0 && s < m.stimuli, "splits: index " + std::to_string(s) + " out of range");
      expect(!seen[static_cast<std::size_t>(s)],
             "splits: index " + std::to_string(s) + " listed twice");
      seen[static_cast<std::size_t>(s)] = 1;
    }
  }
  expect(c.stats.mean.size() == static_cast<std::size_t>(m.neurons) &&
             c.stats.std.size() == static_cast<std::size_t>(m.neurons),
         "stats: expected " + std::to_string(m.neurons) + " neurons");
  expect(c.forward_model_json.has_value() == m.forward_model.has_value(),
         "forward model reference and blob disagree");
}

void write_dataset(const DatasetContainer& c, const fs::path& dir) {
  validate(c);
  fs::create_directories(dir);
  write_file_atomic(dir / kImagesFile, encode_floats(c.stimuli.pixels));
  write_file_atomic(dir / kResponsesFile, encode_floats(c.responses.rates));
  write_file_atomic(dir / kSplitsFile,
                    json{{"train", c.splits.train}, {"test", c.splits.test}}.dump(2) + "\n");
  write_file_atomic(dir / kStatsFile,
                    json{{"mean", c.stats.mean}, {"std", c.stats.std}}.dump(2) + "\n");
  if (c.forward_model_json) {
    write_file_atomic(dir / *c.manifest.forward_model, *c.forward_model_json);
  }
  // The manifest goes last so a complete manifest implies complete blobs.
  write_file_atomic(dir / kManifestFile, manifest_to_json(c.manifest).dump(2) + "\n");
}

DatasetContainer read_dataset(const fs::path& dir) {
  DatasetContainer c;
  c.manifest = manifest_from_json(parse_json(read_file(dir / kManifestFile), kManifestFile));
  const Manifest& m = c.manifest;
  const auto image_values = static_cast<std::uintmax_t>(m.stimuli * m.channels * kImageSizeOnDisk *
                                                        kImageSizeOnDisk);
  const auto response_values = static_cast<std::uintmax_t>(m.stimuli * m.trials * m.neurons);
  check_blob_size(dir / kImagesFile, 4 * image_values);
  check_blob_size(dir / kResponsesFile, 4 * response_values);

  c.stimuli = {m.stimuli, m.channels, kImageSizeOnDisk,
               decode_floats(read_file(dir / kImagesFile), kImagesFile)};
  c.responses = {m.stimuli, m.trials, m.neurons,
                 decode_floats(read_file(dir / kResponsesFile), kResponsesFile)};

  const json splits = parse_json(read_file(dir / kSplitsFile), kSplitsFile);
  c.splits.train = field<std::vector<Index>>(splits, "train", kSplitsFile);
  c.splits.test = field<std::vector<Index>>(splits, "test", kSplitsFile);
  const json stats = parse_json(read_file(dir / kStatsFile), kStatsFile);
  c.stats.mean = field<std::vector<double>>(stats, "mean", kStatsFile);
  c.stats.std = field<std::vector<double>>(stats, "std", kStatsFile);
  if (m.forward_model) {
    c.forward_model_json = read_file(dir / *m.forward_model);
  }
  validate(c);
  return c;
}

Splits split_dataset(Index stimuli, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ArgumentError("split_dataset: test fraction must lie in (0, 1)");
  }
  const auto test_count =
      static_cast<Index>(std::floor(static_cast<double>(stimuli) * test_fraction));
  if (test_count < 2 || stimuli - test_count < 1) {
    throw ArgumentError("split_dataset: " + std::to_string(stimuli) + " stimuli at fraction " +
                        std::to_string(test_fraction) + " leave " + std::to_string(test_count) +
                        " test items (need >= 2) and " + std::to_string(stimuli - test_count) +
                        " train items (need >= 1)");
  }
  std::vector<Index> order(static_cast<std::size_t>(stimuli));
  for (Index i = 0; i < stimuli; ++i) {
    order[static_cast<std::size_t>(i)] = i;
  }
  Rng rng(derive_seed(seed, 0x5b117));
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[uniform_index(rng, i + 1)]);
  }
  Splits s;
  s.test.assign(order.begin(), order.begin() + test_count);
  s.train.assign(order.begin() + test_count, order.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

NeuronStats compute_stats(const ResponseSet& responses, std::span<const Index> train) {
  if (train.empty()) {
    throw ArgumentError("compute_stats: train split is empty");
  }
  const auto n = static_cast<std::size_t>(responses.neurons);
  NeuronStats stats{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  const double count = static_cast<double>(train.size()) * static_cast<double>(responses.trials);
  for (Index s : train) {
    for (Index t = 0; t < responses.trials; ++t) {
      const auto r = responses.response(s, t);
      for (std::size_t i = 0; i < n; ++i) stats.mean[i] += r[i];
    }
  }
  for (double& m : stats.mean) m /= count;
  for (Index s : train) {
    for (Index t = 0; t < responses.trials; ++t) {
      const auto r = responses.response(s, t);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = r[i] - stats.mean[i];
        stats.std[i] += d * d;
      }
    }
  }
  for (double& v : stats.std) v = std::max(std::sqrt(v / count), kStdFloor);
  return stats;
}

DatasetContainer make_container(std::string id, StimulusSet stimuli, ResponseSet responses,
                                std::uint64_t seed, double test_fraction,
                                std::optional<std::string> forward_model_json) {
  if (stimuli.count != responses.stimuli) {
    throw ArgumentError("make_container: " + std::to_string(stimuli.count) + " images but " +
                        std::to_string(responses.stimuli) + " response stimuli");
  }
  DatasetContainer c;
  c.manifest.id = std::move(id);
  c.manifest.stimuli = stimuli.count;
  c.manifest.channels = stimuli.channels;
  c.manifest.neurons = responses.neurons;
  c.manifest.trials = responses.trials;
  c.manifest.seed = seed;
  c.manifest.test_fraction = test_fraction;
  c.manifest.split_seed = derive_seed(seed, 0x5917);
  c.splits = split_dataset(stimuli.count, test_fraction, c.manifest.split_seed);
  c.stats = compute_stats(responses, c.splits.train);
  if (forward_model_json) {
    c.manifest.forward_model = "forward_model.json";
    c.forward_model_json = std::move(forward_model_json);
  }
  c.stimuli = std::move(stimuli);
  c.responses = std::move(responses);
  return c;
}

template <typename Scalar>
Tensor<Scalar> gather_images(const StimulusSet& stimuli, std::span<const Index> ids) {
  const Index per = stimuli.image_elements();
  Tensor<Scalar> out(Shape{static_cast<Index>(ids.size()), stimuli.channels, stimuli.size,
                           stimuli.size});
  for (std::size_t b = 0; b < ids.size(); ++b) {
    const auto img = stimuli.image(ids[b]);
    for (Index i = 0; i < per; ++i) {
      out[static_cast<Index>(b) * per + i] = static_cast<Scalar>(img[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> gather_responses(const ResponseSet& responses, const NeuronStats& stats,
                                std::span<const Presentation> ids) {
  const Index n = responses.neurons;
  Tensor<Scalar> out(Shape{static_cast<Index>(ids.size()), n});
  for (std::size_t b = 0; b < ids.size(); ++b) {
    const auto r = responses.response(ids[b].stimulus, ids[b].trial);
    for (Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      out[static_cast<Index>(b) * n + i] =
          static_cast<Scalar>((r[k] - stats.mean[k]) / stats.std[k]);
    }
  }
  return out;
}

template Tensor<float> gather_images(const StimulusSet&, std::span<const Index>);
template Tensor<double> gather_images(const StimulusSet&, std::span<const Index>);
template Tensor<float> gather_responses(const ResponseSet&, const NeuronStats&,
                                        std::span<const Presentation>);
template Tensor<double> gather_responses(const ResponseSet&, const NeuronStats&,
                                         std::span<const Presentation>);

std::string run_config_to_json(const RunConfig& c) {
  json j = {{"method", to_string(c.method)},
            {"d", c.latent_dim},
            {"N", c.batch_size},
            {"K", c.candidates},
            {"lr", c.learning_rate},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"eval_seed", c.eval_seed},
            {"data", c.data},
            {"temperature", c.temperature},
            {"subsample", c.subsample},
            {"subsample_seed", c.subsample_seed}};
  j["noise"] = c.noise ? json(*c.noise) : json(nullptr);
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text, RunConfig c) {
  const json j = parse_json(text, "run config");
  if (!j.is_object()) {
    throw DataError("run config: expected a JSON object");
  }
  const std::string where = "run config";
  for (const auto& [key, value] : j.items()) {
    if (key == "method") c.method = parse_method(value.get<std::string>());
    else if (key == "d") c.latent_dim = field<Index>(j, "d", where);
    else if (key == "N") c.batch_size = field<Index>(j, "N", where);
    else if (key == "K") c.candidates = field<Index>(j, "K", where);
    else if (key == "lr") c.learning_rate = field<double>(j, "lr", where);
    else if (key == "epochs") c.epochs = field<Index>(j, "epochs", where);
    else if (key == "seed") c.seed = field<std::uint64_t>(j, "seed", where);
    else if (key == "eval_seed") c.eval_seed = field<std::uint64_t>(j, "eval_seed", where);
    else if (key == "data") c.data = field<std::string>(j, "data", where);
    else if (key == "temperature") c.temperature = field<double>(j, "temperature", where);
    else if (key == "subsample") c.subsample = field<Index>(j, "subsample", where);
    else if (key == "subsample_seed") c.subsample_seed = field<std::uint64_t>(j, "subsample_seed", where);
    else if (key == "noise") {
      if (value.is_null()) c.noise.reset();
      else c.noise = field<double>(j, "noise", where);
    } else {
      throw DataError(where + ": unknown key '" + key + "'");
    }
  }
  return c;
}

}  // namespace crossalign
