#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "latent_steer/model.hpp"
#include "latent_steer/rng.hpp"
#include "latent_steer/scene.hpp"
#include "latent_steer/trainer.hpp"

namespace latent_steer::testing {

// 8x8 input, 3 latents, 2 inter + 2 command + 1 motor neurons, narrow convs.
inline ModelConfig toy_config() {
  ModelConfig c;
  c.vae.h = 8;
  c.vae.w = 8;
  c.vae.latent_dim = 3;
  c.vae.channels = {2, 3, 3, 4};
  c.ncp.inter = 2;
  c.ncp.command = 2;
  c.ncp.motor = 1;
  c.ncp.sparsity = 0.3;
  c.ncp.wiring_seed = 3;
  return c;
}

// Uniform random images and steering labels in [-1, 1].
inline std::vector<SceneSample> random_frames(int frames, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SceneSample> out(frames);
  for (auto& s : out) {
    s.image = ImageF(h, w, 3);
    for (auto& v : s.image.data) v = static_cast<float>(rng.uniform());
    s.steering = static_cast<float>(rng.uniform(-1.0, 1.0));
    s.seg_mask = ClassMap(h, w, 1, 0);
  }
  return out;
}

struct GradAudit {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Five-point central differences of the full combined loss against the
// analytic gradient, for every parameter of the model. Two step sizes are
// tried and the closer estimate counts: large steps can straddle an ELU kink,
// small ones lose digits to round-off.
inline GradAudit audit_gradients(const Model<double>& model, const std::vector<SceneSample>& data,
                                 const std::vector<FrameRange>& sequences, const std::vector<double>& noise,
                                 const TrainConfig& config) {
  std::vector<double> grad(model.params.size(), 0.0);
  batch_loss_and_grad<double>(model, data, sequences, noise, config, grad);
  Model<double> probe = model;
  GradAudit audit;
  for (const auto& e : model.layout.entries()) {
    for (std::size_t k = 0; k < e.length; ++k) {
      const std::size_t i = e.offset + k;
      const double saved = probe.params[i];
      auto loss_at = [&](double offset) {
        probe.params[i] = saved + offset;
        return batch_loss_and_grad<double>(probe, data, sequences, noise, config, {}).combined.total;
      };
      double err = 1e300;
      for (double h : {1e-3, 1e-4}) {
        const double fd = (-loss_at(2 * h) + 8 * loss_at(h) - 8 * loss_at(-h) + loss_at(-2 * h)) / (12 * h);
        err = std::min(err, relative_error(grad[i], fd));
      }
      probe.params[i] = saved;
      ++audit.checked;
      if (err > audit.max_rel_error) {
        audit.max_rel_error = err;
        audit.worst = e.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return audit;
}

// The toy audit setup: two sequences of four frames with fixed noise.
inline GradAudit toy_gradient_audit(std::uint64_t seed) {
  const auto config = toy_config();
  auto model = initialize_model<double>(config, seed);
  const auto data = random_frames(8, config.vae.h, config.vae.w, seed + 100);
  const std::vector<FrameRange> seqs{{0, 4}, {4, 8}};
  Rng rng(seed + 200);
  std::vector<double> noise(8 * config.vae.latent_dim);
  for (auto& v : noise) v = rng.normal();
  return audit_gradients(model, data, seqs, noise, paper_train_config());
}

}  // namespace latent_steer::testing
