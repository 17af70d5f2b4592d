#include "latent_steer/config_json.hpp"

namespace latent_steer {

using nlohmann::json;

void to_json(json& j, const SceneConfig& c) {
  j = json{{"h", c.h},
           {"w", c.w},
           {"frames", c.frames},
           {"seed", c.seed},
           {"curvature_scale", c.curvature_scale},
           {"curvature_smoothness", c.curvature_smoothness},
           {"increment_scale", c.increment_scale},
           {"vehicle_rate", c.vehicle_rate},
           {"texture_noise", c.texture_noise}};
}

void from_json(const json& j, SceneConfig& c) {
  j.at("h").get_to(c.h);
  j.at("w").get_to(c.w);
  j.at("frames").get_to(c.frames);
  j.at("seed").get_to(c.seed);
  j.at("curvature_scale").get_to(c.curvature_scale);
  j.at("curvature_smoothness").get_to(c.curvature_smoothness);
  j.at("increment_scale").get_to(c.increment_scale);
  j.at("vehicle_rate").get_to(c.vehicle_rate);
  j.at("texture_noise").get_to(c.texture_noise);
}

void to_json(json& j, const VaeConfig& c) {
  j = json{{"h", c.h}, {"w", c.w}, {"latent_dim", c.latent_dim}, {"channels", c.channels}, {"kernels", c.kernels}};
}

void from_json(const json& j, VaeConfig& c) {
  j.at("h").get_to(c.h);
  j.at("w").get_to(c.w);
  j.at("latent_dim").get_to(c.latent_dim);
  j.at("channels").get_to(c.channels);
  j.at("kernels").get_to(c.kernels);
}

void to_json(json& j, const NcpConfig& c) {
  j = json{{"inter", c.inter},         {"command", c.command},         {"motor", c.motor},
           {"sparsity", c.sparsity}, {"wiring_seed", c.wiring_seed}, {"dt", c.dt}};
}

void from_json(const json& j, NcpConfig& c) {
  j.at("inter").get_to(c.inter);
  j.at("command").get_to(c.command);
  j.at("motor").get_to(c.motor);
  j.at("sparsity").get_to(c.sparsity);
  j.at("wiring_seed").get_to(c.wiring_seed);
  j.at("dt").get_to(c.dt);
}

void to_json(json& j, const ModelConfig& c) { j = json{{"vae", c.vae}, {"ncp", c.ncp}}; }

void from_json(const json& j, ModelConfig& c) {
  j.at("vae").get_to(c.vae);
  j.at("ncp").get_to(c.ncp);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"beta", c.beta},     {"gamma", c.gamma},           {"alpha", c.alpha},
           {"lambda", c.lambda}, {"lr", c.lr},                 {"batch", c.batch},
           {"seq_len", c.seq_len}, {"epochs", c.epochs},       {"seed", c.seed},
           {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps}};
}

void from_json(const json& j, TrainConfig& c) {
  j.at("beta").get_to(c.beta);
  j.at("gamma").get_to(c.gamma);
  j.at("alpha").get_to(c.alpha);
  j.at("lambda").get_to(c.lambda);
  j.at("lr").get_to(c.lr);
  j.at("batch").get_to(c.batch);
  j.at("seq_len").get_to(c.seq_len);
  j.at("epochs").get_to(c.epochs);
  j.at("seed").get_to(c.seed);
  j.at("adam_beta1").get_to(c.adam_beta1);
  j.at("adam_beta2").get_to(c.adam_beta2);
  j.at("adam_eps").get_to(c.adam_eps);
}

void to_json(json& j, const Synapse& s) {
  j = json::array({static_cast<int>(s.bank), s.pre, s.post, s.polarity});
}

void from_json(const json& j, Synapse& s) {
  if (!j.is_array() || j.size() != 4) throw json::type_error::create(302, "synapse must be [bank, pre, post, polarity]", &j);
  const int bank = j.at(0).get<int>();
  if (bank < 0 || bank > 3) throw json::out_of_range::create(401, "synapse bank out of range", &j);
  s.bank = static_cast<SynapseBank>(bank);
  j.at(1).get_to(s.pre);
  j.at(2).get_to(s.post);
  j.at(3).get_to(s.polarity);
}

void to_json(json& j, const WiringSpec& w) {
  j = json{{"sensory", w.sensory}, {"inter", w.inter},       {"command", w.command},  {"motor", w.motor},
           {"sparsity", w.sparsity}, {"seed", w.seed}, {"synapses", w.synapses}};
}

void from_json(const json& j, WiringSpec& w) {
  j.at("sensory").get_to(w.sensory);
  j.at("inter").get_to(w.inter);
  j.at("command").get_to(w.command);
  j.at("motor").get_to(w.motor);
  j.at("sparsity").get_to(w.sparsity);
  j.at("seed").get_to(w.seed);
  j.at("synapses").get_to(w.synapses);
}

void to_json(json& j, const EpochLosses& e) {
  j = json{{"total", e.total}, {"recon", e.recon}, {"kl", e.kl}, {"pred", e.pred}};
}

void from_json(const json& j, EpochLosses& e) {
  j.at("total").get_to(e.total);
  j.at("recon").get_to(e.recon);
  j.at("kl").get_to(e.kl);
  j.at("pred").get_to(e.pred);
}

void to_json(json& j, const MeanStd& m) { j = json{{"mean", m.mean}, {"std", m.std}, {"count", m.count}}; }

void to_json(json& j, const FiveNumber& f) {
  j = json{{"min", f.min}, {"q1", f.q1}, {"median", f.median}, {"q3", f.q3}, {"max", f.max}};
}

void to_json(json& j, const FrameRange& r) { j = json{{"begin", r.begin}, {"end", r.end}}; }

}  // namespace latent_steer
