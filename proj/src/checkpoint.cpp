#include "latent_steer/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "latent_steer/config_json.hpp"
#include "latent_steer/error.hpp"
#include "latent_steer/io_util.hpp"

namespace latent_steer {

using nlohmann::json;

json checkpoint_manifest(const Checkpoint& ckpt) {
  const auto& m = ckpt.model;
  json layers = json::array();
  for (int l = 0; l < VaeNet::kLayers; ++l) {
    const auto& s = m.vae.layer_shape(l);
    layers.push_back({{"in", {s.large_c, s.large_h, s.large_w}},
                      {"out", {s.small_c, s.small_h, s.small_w}},
                      {"kernel", s.kernel},
                      {"stride", s.stride},
                      {"pad", s.pad}});
  }
  json index = json::array();
  for (const auto& e : m.layout.entries()) {
    index.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"length", e.length}});
  }
  json j;
  j["schema_version"] = kCheckpointVersion;
  j["image_shape"] = {m.config.vae.h, m.config.vae.w, 3};
  j["latent_dim"] = m.config.vae.latent_dim;
  j["model"] = m.config;
  j["wiring"] = m.ncp.wiring();
  j["conv_layers"] = layers;
  j["train"] = ckpt.train;
  j["init_seed"] = ckpt.init_seed;
  j["loss_curve"] = ckpt.curve;
  j["dtype"] = "float32-le";
  j["param_count"] = m.layout.total();
  j["params"] = index;
  return j;
}

std::vector<std::uint8_t> encode_params(const std::vector<float>& params) {
  std::vector<std::uint8_t> out(params.size() * 4);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &params[i], 4);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / kParamsName, encode_params(ckpt.model.params));
  write_file_atomic(dir / kManifestName, checkpoint_manifest(ckpt).dump(2) + "\n");
}

namespace {

struct IndexEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset, length;
};

std::vector<IndexEntry> parse_index(const json& params) {
  std::vector<IndexEntry> out;
  for (const auto& p : params) {
    out.push_back({p.at("name").get<std::string>(), p.at("shape").get<std::vector<int>>(),
                   p.at("offset").get<std::size_t>(), p.at("length").get<std::size_t>()});
  }
  return out;
}

void check_index(const std::vector<IndexEntry>& index, std::size_t blob_values) {
  for (const auto& e : index) {
    if (e.offset > blob_values || e.length > blob_values - e.offset) {
      throw IntegrityError("parameter '" + e.name + "' range [" + std::to_string(e.offset) + ", " +
                           std::to_string(e.offset + e.length) + ") exceeds the blob of " +
                           std::to_string(blob_values) + " values");
    }
  }
  std::vector<const IndexEntry*> sorted;
  for (const auto& e : index) sorted.push_back(&e);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const auto* prev = sorted[i - 1];
    if (prev->offset + prev->length > sorted[i]->offset) {
      throw IntegrityError("parameter '" + sorted[i]->name + "' overlaps parameter '" + prev->name + "'");
    }
  }
}

}  // namespace

Checkpoint load_checkpoint(const std::string& manifest_text, const std::vector<std::uint8_t>& blob) {
  json j;
  try {
    j = json::parse(manifest_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what(), e.byte);
  }
  Checkpoint ckpt;
  std::vector<IndexEntry> index;
  WiringSpec wiring;
  ModelConfig config;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kCheckpointVersion) {
      throw ConfigError("checkpoint schema version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    }
    config = j.at("model").get<ModelConfig>();
    wiring = j.at("wiring").get<WiringSpec>();
    ckpt.train = j.at("train").get<TrainConfig>();
    ckpt.init_seed = j.at("init_seed").get<std::uint64_t>();
    ckpt.curve = j.at("loss_curve").get<std::vector<EpochLosses>>();
    index = parse_index(j.at("params"));
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint manifest is incomplete: ") + e.what());
  }

  if (blob.size() % 4 != 0) {
    throw IntegrityError("parameter blob size " + std::to_string(blob.size()) + " is not a multiple of 4");
  }
  check_index(index, blob.size() / 4);

  try {
    config.vae.validate();
    wiring.validate();
    ckpt.model = Model<float>::create(config, wiring);
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("checkpoint describes an invalid model: ") + e.what());
  }
  const auto& entries = ckpt.model.layout.entries();
  for (const auto& e : index) {
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const ParamEntry& p) { return p.name == e.name; });
    if (it == entries.end()) throw IntegrityError("parameter '" + e.name + "' is not part of the model");
    if (it->shape != e.shape || it->length != e.length || it->offset != e.offset) {
      throw IntegrityError("parameter '" + e.name + "' does not match the model layout");
    }
  }
  for (const auto& p : entries) {
    if (std::none_of(index.begin(), index.end(), [&](const IndexEntry& e) { return e.name == p.name; })) {
      throw IntegrityError("parameter '" + p.name + "' is missing from the manifest");
    }
  }
  if (blob.size() / 4 != ckpt.model.layout.total()) {
    throw IntegrityError("parameter blob holds " + std::to_string(blob.size() / 4) + " values, manifest needs " +
                         std::to_string(ckpt.model.layout.total()));
  }
  for (std::size_t i = 0; i < ckpt.model.params.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(blob[i * 4 + b]) << (8 * b);
    std::memcpy(&ckpt.model.params[i], &bits, 4);
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest = read_file(dir / kManifestName);
  const auto blob = read_file(dir / kParamsName);
  return load_checkpoint(std::string(manifest.begin(), manifest.end()), blob);
}

std::string checkpoint_hash(const std::filesystem::path& dir) {
  auto bytes = read_file(dir / kManifestName);
  const auto blob = read_file(dir / kParamsName);
  bytes.insert(bytes.end(), blob.begin(), blob.end());
  return sha256_hex(bytes);
}

}  // namespace latent_steer
