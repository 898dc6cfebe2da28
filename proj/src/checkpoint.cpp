#include <bit>
#include <cstring>
#include <map>

#include <json.hpp>

#include "crossalign/trainer.hpp"

namespace crossalign {

namespace {

using nlohmann::ordered_json;

template <typename Scalar>
constexpr const char* scalar_name() {
  return sizeof(Scalar) == 8 ? "float64" : "float32";
}

template <typename Scalar>
using Bits = std::conditional_t<sizeof(Scalar) == 8, std::uint64_t, std::uint32_t>;

template <typename Scalar>
void append_le(std::string& out, const Scalar* values, Index count) {
  for (Index i = 0; i < count; ++i) {
    auto bits = std::bit_cast<Bits<Scalar>>(values[i]);
    for (std::size_t b = 0; b < sizeof(bits); ++b) {
      out.push_back(static_cast<char>(bits & 0xff));
      bits >>= 8;
    }
  }
}

template <typename Scalar>
void read_le(const char* bytes, Scalar* values, Index count) {
  for (Index i = 0; i < count; ++i) {
    Bits<Scalar> bits = 0;
    for (std::size_t b = sizeof(bits); b-- > 0;) {
      bits = (bits << 8) |
             static_cast<unsigned char>(bytes[static_cast<std::size_t>(i) * sizeof(bits) + b]);
    }
    values[i] = std::bit_cast<Scalar>(bits);
  }
}

template <typename Scalar>
ordered_json architecture(const ModelParams<Scalar>& params) {
  if (const auto* vna = std::get_if<VnaParams<Scalar>>(&params)) {
    return {{"channels", vna->visual.config.channels},
            {"neurons", vna->spike.neurons},
            {"latent_dim", vna->spike.out_dim}};
  }
  if (const auto* enc = std::get_if<DirectEncoderParams<Scalar>>(&params)) {
    return {{"channels", enc->net.config.channels},
            {"neurons", enc->neurons()},
            {"blocks", enc->net.config.blocks},
            {"image_size", enc->net.config.image_size}};
  }
  const auto& dec = std::get<DirectDecoderParams<Scalar>>(params).config;
  return {{"channels", dec.channels},
          {"neurons", dec.neurons},
          {"blocks", dec.blocks},
          {"image_size", dec.image_size}};
}

template <typename Scalar>
ModelParams<Scalar> model_from_architecture(Method method, const nlohmann::json& a) {
  const auto c = a.at("channels").get<Index>(), n = a.at("neurons").get<Index>();
  switch (method) {
    case Method::vna:
      return init_params<Scalar>(0, c, n, a.at("latent_dim").get<Index>());
    case Method::direct_encode:
      return make_direct_encoder<Scalar>(c, n, 0, a.at("blocks").get<int>(),
                                         a.at("image_size").get<Index>());
    case Method::direct_decode:
      return make_direct_decoder<Scalar>(
          DirectDecoderConfig{n, c, a.at("image_size").get<Index>(), a.at("blocks").get<int>()},
          0);
  }
  throw DataError("checkpoint: unknown method");
}

struct Header {
  nlohmann::json meta;
  std::string blobs;
};

Header read_header(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw DataError(path.string() + ": not a checkpoint (bad magic)");
  }
  std::uint64_t length = 0;
  for (int b = 7; b >= 0; --b) {
    length = (length << 8) | static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(b)]);
  }
  if (length > bytes.size() - 16) {
    throw DataError(path.string() + ": metadata length " + std::to_string(length) +
                    " exceeds the file size");
  }
  Header h;
  try {
    h.meta = nlohmann::json::parse(bytes.substr(16, length));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad metadata: " + e.what());
  }
  const int version = h.meta.value("version", -1);
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": checkpoint version " + std::to_string(version) +
                    " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  h.blobs = bytes.substr(16 + length);
  return h;
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const TrainState<Scalar>& state, const std::filesystem::path& path) {
  auto& params = const_cast<ModelParams<Scalar>&>(state.params);
  ordered_json tensors = ordered_json::array();
  std::string blobs;
  auto add = [&](const std::string& name, const char* role, const Shape& shape,
                 const Scalar* data, Index count) {
    tensors.push_back({{"name", name},
                       {"role", role},
                       {"shape", shape},
                       {"offset", blobs.size()},
                       {"count", count}});
    append_le(blobs, data, count);
  };
  for_each_tensor(params, [&](const std::string& name, Tensor<Scalar>& t, TensorRole role) {
    add(name, role == TensorRole::parameter ? "parameter" : "buffer", t.shape(), t.raw(),
        t.size());
  });
  const auto refs = parameter_refs(params);
  if (!state.adam.m.empty()) {
    for (std::size_t i = 0; i < refs.size(); ++i) {
      add("adam.m." + refs[i].name, "optimizer", refs[i].tensor->shape(), state.adam.m[i].data(),
          state.adam.m[i].size());
      add("adam.v." + refs[i].name, "optimizer", refs[i].tensor->shape(), state.adam.v[i].data(),
          state.adam.v[i].size());
    }
  }
  const auto& o = state.adam.options;
  const ordered_json meta = {
      {"format", "crossalign-checkpoint"},
      {"version", kCheckpointVersion},
      {"method", to_string(method_of(state.params))},
      {"scalar", scalar_name<Scalar>()},
      {"byte_order", "little"},
      {"epoch", state.epoch},
      {"architecture", architecture(state.params)},
      {"config", ordered_json::parse(run_config_to_json(state.config))},
      {"adam",
       {{"learning_rate", o.learning_rate},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"epsilon", o.epsilon},
        {"step", state.adam.step}}},
      {"history",
       {{"epoch_loss", state.history.epoch_loss},
        {"wall_seconds", state.history.wall_seconds},
        {"seed", state.history.seed},
        {"batch_size", state.history.batch_size}}},
      {"tensors", tensors}};
  const std::string text = meta.dump(1);
  std::string out(kCheckpointMagic, 8);
  std::uint64_t length = text.size();
  for (int b = 0; b < 8; ++b) {
    out.push_back(static_cast<char>(length & 0xff));
    length >>= 8;
  }
  out += text;
  out += blobs;
  write_file_atomic(path, out);
}

template <typename Scalar>
TrainState<Scalar> load_checkpoint(const std::filesystem::path& path,
                                   std::optional<Method> expected) {
  const Header h = read_header(path);
  const std::string where = path.string();
  try {
    const auto& meta = h.meta;
    const Method method = parse_method(meta.at("method").get<std::string>());
    if (expected && *expected != method) {
      throw DataError(where + ": checkpoint holds a " + to_string(method) + " model, expected " +
                      to_string(*expected));
    }
    const auto scalar = meta.at("scalar").get<std::string>();
    if (scalar != scalar_name<Scalar>()) {
      throw DataError(where + ": checkpoint scalar type " + scalar + ", this build uses " +
                      scalar_name<Scalar>());
    }
    TrainState<Scalar> state{run_config_from_json(meta.at("config").dump()),
                             model_from_architecture<Scalar>(method, meta.at("architecture")),
                             {},
                             {},
                             meta.at("epoch").get<Index>()};
    const auto& adam = meta.at("adam");
    state.adam.options = {adam.at("learning_rate").get<double>(), adam.at("beta1").get<double>(),
                          adam.at("beta2").get<double>(), adam.at("epsilon").get<double>()};
    state.adam.step = adam.at("step").get<std::int64_t>();
    const auto& hist = meta.at("history");
    state.history.epoch_loss = hist.at("epoch_loss").get<std::vector<double>>();
    state.history.wall_seconds = hist.at("wall_seconds").get<double>();
    state.history.seed = hist.at("seed").get<std::uint64_t>();
    state.history.batch_size = hist.at("batch_size").get<Index>();
    state.history.config = state.config;

    std::map<std::string, nlohmann::json> entries;
    std::size_t total = 0;
    for (const auto& e : meta.at("tensors")) {
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (offset != total) {
        throw DataError(where + ": tensor '" + e.at("name").get<std::string>() +
                        "' is not contiguous");
      }
      total += count * sizeof(Scalar);
      entries[e.at("name").get<std::string>()] = e;
    }
    if (total != h.blobs.size()) {
      throw DataError(where + ": tensor data is " + std::to_string(h.blobs.size()) +
                      " bytes, metadata declares " + std::to_string(total));
    }
    auto fill = [&](const std::string& name, const Shape& shape, Scalar* data) {
      const auto it = entries.find(name);
      if (it == entries.end()) {
        throw DataError(where + ": missing tensor '" + name + "'");
      }
      if (it->second.at("shape").get<Shape>() != shape) {
        throw DataError(where + ": tensor '" + name + "' has shape " +
                        it->second.at("shape").dump() + ", expected " + to_string(shape));
      }
      read_le(h.blobs.data() + it->second.at("offset").get<std::size_t>(), data, numel(shape));
      entries.erase(it);
    };
    for_each_tensor(state.params, [&](const std::string& name, Tensor<Scalar>& t, TensorRole) {
      fill(name, t.shape(), t.raw());
    });
    if (!entries.empty()) {
      const auto refs = parameter_refs(state.params);
      for (const auto& r : refs) {
        state.adam.m.push_back(Tensor<Scalar>::Array::Zero(r.tensor->size()));
        state.adam.v.push_back(Tensor<Scalar>::Array::Zero(r.tensor->size()));
        fill("adam.m." + r.name, r.tensor->shape(), state.adam.m.back().data());
        fill("adam.v." + r.name, r.tensor->shape(), state.adam.v.back().data());
      }
    }
    if (!entries.empty()) {
      throw DataError(where + ": unexpected tensor '" + entries.begin()->first + "'");
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": bad metadata: " + e.what());
  } catch (const ArgumentError& e) {
    throw DataError(where + ": " + e.what());
  }
}

Method checkpoint_method(const std::filesystem::path& path) {
  const Header h = read_header(path);
  try {
    return parse_method(h.meta.at("method").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad metadata: " + e.what());
  }
}

#define CROSSALIGN_INSTANTIATE_CHECKPOINT(S)                                   \
  template void save_checkpoint(const TrainState<S>&, const std::filesystem::path&); \
  template TrainState<S> load_checkpoint(const std::filesystem::path&, std::optional<Method>);

CROSSALIGN_INSTANTIATE_CHECKPOINT(float)
CROSSALIGN_INSTANTIATE_CHECKPOINT(double)

#undef CROSSALIGN_INSTANTIATE_CHECKPOINT

}  // namespace crossalign
