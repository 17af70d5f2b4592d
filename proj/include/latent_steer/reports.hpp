#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "latent_steer/alp.hpp"
#include "latent_steer/trainer.hpp"

namespace latent_steer {

inline constexpr int kReportVersion = 1;

struct InputFile {
  std::string role;  // "data", "ckpt", ...
  std::filesystem::path path;
  std::string sha256;
};

// Everything needed to rerun a command: arguments, seeds, the effective
// configuration and hashes of the inputs.
nlohmann::json reproducibility_stanza(const std::string& command, const std::vector<std::string>& argv,
                                      const nlohmann::json& seeds, const nlohmann::json& config,
                                      const std::vector<InputFile>& inputs);

nlohmann::json eval_json(const EvalStats& stats, bool with_sequences);
nlohmann::json crossval_json(const CrossValidation& cv);
nlohmann::json impact_record_json(const ImpactRecord& r);
nlohmann::json alp_dimension_json(const AlpDimensionResult& r, const ImpactRecord& impact);
nlohmann::json aggregate_json(const ImpactAggregate& agg);

// Pretty-printed with a trailing newline, written atomically.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace latent_steer
