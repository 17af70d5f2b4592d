#pragma once

#include <json.hpp>

#include "latent_steer/model.hpp"
#include "latent_steer/ncp.hpp"
#include "latent_steer/scene.hpp"
#include "latent_steer/trainer.hpp"

namespace latent_steer {

// nlohmann::json conversions. from_json requires every key.
void to_json(nlohmann::json& j, const SceneConfig& c);
void from_json(const nlohmann::json& j, SceneConfig& c);
void to_json(nlohmann::json& j, const VaeConfig& c);
void from_json(const nlohmann::json& j, VaeConfig& c);
void to_json(nlohmann::json& j, const NcpConfig& c);
void from_json(const nlohmann::json& j, NcpConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const Synapse& s);
void from_json(const nlohmann::json& j, Synapse& s);
void to_json(nlohmann::json& j, const WiringSpec& w);
void from_json(const nlohmann::json& j, WiringSpec& w);
void to_json(nlohmann::json& j, const EpochLosses& e);
void from_json(const nlohmann::json& j, EpochLosses& e);
void to_json(nlohmann::json& j, const MeanStd& m);
void to_json(nlohmann::json& j, const FiveNumber& f);
void to_json(nlohmann::json& j, const FrameRange& r);

}  // namespace latent_steer
