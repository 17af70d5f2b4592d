#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "latent_steer/image.hpp"
#include "latent_steer/ncp.hpp"
#include "latent_steer/params.hpp"
#include "latent_steer/vae.hpp"

namespace latent_steer {

struct NcpConfig {
  int inter = 12;
  int command = 6;
  int motor = 1;
  // Fraction of candidate synapses pruned.
  double sparsity = 0.6;
  std::uint64_t wiring_seed = 1;
  double dt = 1.0;

  bool operator==(const NcpConfig&) const = default;
};

struct ModelConfig {
  VaeConfig vae;
  NcpConfig ncp;

  bool operator==(const ModelConfig&) const = default;
};

// 78x200 input, 32 latents, 19 LTC neurons.
ModelConfig paper_model_config();
// 48x64 input, 16 latents, 19 LTC neurons.
ModelConfig desk_model_config();

// Lower bound kept on LTC time constants during training.
inline constexpr double kMinTau = 1e-3;

template <typename T>
struct Model {
  ModelConfig config;
  ParamLayout layout;
  VaeNet vae;
  NcpNet ncp;
  std::vector<T> params;

  // Builds the layout for config + wiring; parameters are zero.
  static Model create(const ModelConfig& config, const WiringSpec& wiring);

  template <typename U>
  Model<U> cast() const {
    Model<U> out;
    out.config = config;
    out.layout = layout;
    out.vae = vae;
    out.ncp = ncp;
    out.params.assign(params.begin(), params.end());
    return out;
  }

  std::span<T> param(const std::string& name) {
    const auto& e = layout.at(name);
    return std::span<T>(params).subspan(e.offset, e.length);
  }
  std::span<const T> param(const std::string& name) const {
    const auto& e = layout.at(name);
    return std::span<const T>(params).subspan(e.offset, e.length);
  }

  // Projects LTC parameters back into their valid set (tau >= kMinTau, w >= 0).
  void apply_constraints();
};

// Builds the wiring from config.ncp and draws the initial parameters.
template <typename T>
Model<T> initialize_model(const ModelConfig& config, std::uint64_t seed);

struct LatentCode {
  std::vector<double> mu;
  std::vector<double> log_var;
  std::vector<double> z;

  std::vector<double> sigma() const;
};

// z = mu + exp(log_var / 2) * noise.
template <typename T>
LatentCode encode(const ImageF& x, const Model<T>& model, std::span<const double> noise);

template <typename T>
ImageD decode(std::span<const double> z, const Model<T>& model);

// One NCP step from the zero state followed by the read-out.
template <typename T>
double steer_single_step(std::span<const double> z, const Model<T>& model);

}  // namespace latent_steer
