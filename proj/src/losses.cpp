#include "latent_steer/losses.hpp"

namespace latent_steer {

double kl_loss(std::span<const double> mu, std::span<const double> log_var) {
  if (mu.size() != log_var.size()) throw DimensionError("kl_loss: mu and log_var lengths differ");
  double acc = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    if (!std::isfinite(mu[j]) || !std::isfinite(log_var[j])) {
      throw NumericError("kl_loss: non-finite input at dimension " + std::to_string(j));
    }
    acc += 1.0 - mu[j] * mu[j] - std::exp(log_var[j]) + log_var[j];
  }
  return -0.5 * acc;
}

double pred_loss(std::span<const double> yhat, std::span<const double> y, double lambda) {
  if (yhat.size() != y.size() || y.empty()) throw DimensionError("pred_loss needs two equal, non-empty sequences");
  if (!(lambda >= 0.0)) throw ConfigError("pred_loss: lambda must be >= 0");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double w = pred_weight(y[i], lambda);
    const double d = yhat[i] - y[i];
    num += w * d * d;
    den += w;
  }
  return num / den;
}

}  // namespace latent_steer
