#include "latent_steer/model.hpp"

#include <algorithm>
#include <cmath>

#include "latent_steer/error.hpp"
#include "latent_steer/rng.hpp"

namespace latent_steer {

ModelConfig paper_model_config() {
  ModelConfig c;
  c.vae.h = 78;
  c.vae.w = 200;
  c.vae.latent_dim = 32;
  return c;
}

ModelConfig desk_model_config() {
  ModelConfig c;
  c.vae.h = 48;
  c.vae.w = 64;
  c.vae.latent_dim = 16;
  return c;
}

template <typename T>
Model<T> Model<T>::create(const ModelConfig& config, const WiringSpec& wiring) {
  if (wiring.sensory != config.vae.latent_dim) throw ConfigError("wiring sensory count must equal the latent dimension");
  Model<T> m;
  m.config = config;
  m.vae = VaeNet(config.vae, m.layout);
  m.ncp = NcpNet(wiring, m.layout);
  m.params.assign(m.layout.total(), T{0});
  return m;
}

template <typename T>
void Model<T>::apply_constraints() {
  for (auto& v : param("ncp.tau")) v = std::max(v, static_cast<T>(kMinTau));
  for (auto& v : param("ncp.weight")) v = std::max(v, T{0});
}

template <typename T>
Model<T> initialize_model(const ModelConfig& config, std::uint64_t seed) {
  const auto& nc = config.ncp;
  const WiringSpec wiring =
      build_wiring(config.vae.latent_dim, nc.inter, nc.command, nc.motor, nc.sparsity, nc.wiring_seed);
  Model<T> m = Model<T>::create(config, wiring);
  Rng rng(seed);

  auto glorot = [&](std::span<T> w, double fan_in, double fan_out, double gain) {
    const double bound = gain * std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
  };
  auto uniform = [&](std::span<T> w, double lo, double hi) {
    for (auto& v : w) v = static_cast<T>(rng.uniform(lo, hi));
  };

  for (const auto& e : m.layout.entries()) {
    auto p = std::span<T>(m.params).subspan(e.offset, e.length);
    const auto& n = e.name;
    const bool is_weight = n.ends_with(".weight");
    if (n.starts_with("enc.conv") || n.starts_with("dec.tconv")) {
      if (is_weight) {
        const double k2 = static_cast<double>(e.shape[2]) * e.shape[3];
        glorot(p, e.shape[1] * k2, e.shape[0] * k2, 1.0);
      }
    } else if (n == "enc.mu.weight" || n == "dec.fc.weight") {
      glorot(p, e.shape[1], e.shape[0], 1.0);
    } else if (n == "enc.log_var.weight") {
      glorot(p, e.shape[1], e.shape[0], 0.1);
    } else if (n == "ncp.tau") {
      uniform(p, 0.5, 2.0);
    } else if (n == "ncp.v_leak") {
      uniform(p, -0.2, 0.2);
    } else if (n == "ncp.weight") {
      uniform(p, 0.1, 1.0);
    } else if (n == "ncp.gate_slope") {
      uniform(p, 2.0, 6.0);
    } else if (n == "ncp.gate_mid") {
      for (std::size_t k = 0; k < p.size(); ++k) {
        const bool sensory = wiring.synapses[k].bank == SynapseBank::kSensoryInter;
        p[k] = static_cast<T>(sensory ? rng.uniform(-0.5, 0.5) : rng.uniform(-0.3, 0.3));
      }
    } else if (n == "readout.weight") {
      std::fill(p.begin(), p.end(), T{1});
    }
    // Remaining entries are biases and start at zero.
  }
  return m;
}

std::vector<double> LatentCode::sigma() const {
  std::vector<double> s(log_var.size());
  for (std::size_t j = 0; j < s.size(); ++j) s[j] = std::exp(0.5 * log_var[j]);
  return s;
}

template <typename T>
LatentCode encode(const ImageF& x, const Model<T>& model, std::span<const double> noise) {
  const auto& vc = model.config.vae;
  if (x.h != vc.h || x.w != vc.w || x.c != 3) {
    throw DimensionError("image is " + std::to_string(x.h) + "x" + std::to_string(x.w) + "x" + std::to_string(x.c) +
                         ", model expects " + std::to_string(vc.h) + "x" + std::to_string(vc.w) + "x3");
  }
  const auto m = static_cast<std::size_t>(vc.latent_dim);
  if (noise.size() != m) throw DimensionError("noise length must equal the latent dimension");
  std::vector<T> chw(x.size());
  pack_image<T, float>(x.data, x.h, x.w, 3, 1, 0, chw);
  VaeNet::EncoderTape<T> tape;
  model.vae.template encode<T>(model.params, chw, 1, tape);
  LatentCode code;
  code.mu.assign(tape.mu.begin(), tape.mu.end());
  code.log_var.assign(tape.log_var.begin(), tape.log_var.end());
  code.z.resize(m);
  for (std::size_t j = 0; j < m; ++j) code.z[j] = code.mu[j] + std::exp(0.5 * code.log_var[j]) * noise[j];
  return code;
}

template <typename T>
ImageD decode(std::span<const double> z, const Model<T>& model) {
  for (double v : z)
    if (!std::isfinite(v)) throw NumericError("decode: non-finite latent");
  std::vector<T> zt(z.begin(), z.end());
  VaeNet::DecoderTape<T> tape;
  model.vae.template decode<T>(model.params, zt, 1, tape);
  const auto& vc = model.config.vae;
  ImageD out(vc.h, vc.w, 3);
  unpack_image<double, T>(tape.output(), vc.h, vc.w, 3, 1, 0, out.data);
  return out;
}

template <typename T>
double steer_single_step(std::span<const double> z, const Model<T>& model) {
  if (z.size() != static_cast<std::size_t>(model.ncp.inputs())) throw DimensionError("latent length mismatch");
  std::vector<T> zt(z.begin(), z.end());
  std::vector<T> zero(model.ncp.neurons(), T{0});
  NcpNet::StepTape<T> tape;
  model.ncp.template step<T>(model.params, zero, zt, static_cast<T>(model.config.ncp.dt), tape);
  return static_cast<double>(model.ncp.template readout<T>(model.params, tape.new_state));
}

template struct Model<float>;
template struct Model<double>;
template Model<float> initialize_model<float>(const ModelConfig&, std::uint64_t);
template Model<double> initialize_model<double>(const ModelConfig&, std::uint64_t);
template LatentCode encode<float>(const ImageF&, const Model<float>&, std::span<const double>);
template LatentCode encode<double>(const ImageF&, const Model<double>&, std::span<const double>);
template ImageD decode<float>(std::span<const double>, const Model<float>&);
template ImageD decode<double>(std::span<const double>, const Model<double>&);
template double steer_single_step<float>(std::span<const double>, const Model<float>&);
template double steer_single_step<double>(std::span<const double>, const Model<double>&);

}  // namespace latent_steer
