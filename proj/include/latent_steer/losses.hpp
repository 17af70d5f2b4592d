#pragma once

#include <cmath>
#include <span>
#include <string>

#include "latent_steer/error.hpp"
#include "latent_steer/image.hpp"

namespace latent_steer {

// (1/N) * sum over samples of the squared error summed over h, w and channels.
template <typename T>
double recon_loss(std::span<const Image<T>> x, std::span<const Image<T>> xhat) {
  if (x.size() != xhat.size() || x.empty()) throw DimensionError("recon_loss needs two equal, non-empty batches");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i].same_shape(xhat[i])) throw DimensionError("recon_loss image shapes differ at sample " + std::to_string(i));
    double s = 0.0;
    for (std::size_t k = 0; k < x[i].size(); ++k) {
      const double d = static_cast<double>(x[i].data[k]) - static_cast<double>(xhat[i].data[k]);
      s += d * d;
    }
    total += s;
  }
  return total / static_cast<double>(x.size());
}

// Closed-form KL(N(mu, exp(log_var)) || N(0, I)).
double kl_loss(std::span<const double> mu, std::span<const double> log_var);

// Exponentially weighted MSE with w_i = exp(lambda * |y_i|).
double pred_loss(std::span<const double> yhat, std::span<const double> y, double lambda);

// Weight of one label in pred_loss.
inline double pred_weight(double y, double lambda) { return std::exp(lambda * std::abs(y)); }

}  // namespace latent_steer
