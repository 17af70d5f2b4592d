#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "latent_steer/model.hpp"
#include "latent_steer/trainer.hpp"

namespace latent_steer {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kParamsName = "params.bin";

struct Checkpoint {
  Model<float> model;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  std::vector<EpochLosses> curve;
};

nlohmann::json checkpoint_manifest(const Checkpoint& ckpt);
std::vector<std::uint8_t> encode_params(const std::vector<float>& params);

// Writes <dir>/manifest.json and <dir>/params.bin (float32 little-endian in
// manifest order), each atomically.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);

// Throws FormatError for an unreadable manifest, ConfigError for a schema
// version mismatch and IntegrityError when manifest and blob disagree.
Checkpoint load_checkpoint(const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::string& manifest_text, const std::vector<std::uint8_t>& blob);

// sha256 over the manifest text followed by the blob.
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace latent_steer
