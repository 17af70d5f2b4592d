#include "latent_steer/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "latent_steer/error.hpp"

namespace latent_steer {

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  double m2 = 0.0;
  for (double v : values) {
    ++r.count;
    const double delta = v - r.mean;
    r.mean += delta / static_cast<double>(r.count);
    m2 += delta * (v - r.mean);
  }
  if (r.count > 0) r.std = std::sqrt(m2 / static_cast<double>(r.count));
  return r;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ConfigError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile level must lie in [0,1]");
  constexpr std::int64_t kDenom = 1'000'000;
  const auto q_num = static_cast<std::int64_t>(std::llround(q * kDenom));
  const std::int64_t pos_num = q_num * static_cast<std::int64_t>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos_num / kDenom);
  const std::int64_t rem = pos_num % kDenom;
  if (rem == 0) return sorted[lo];
  const double frac = static_cast<double>(rem) / static_cast<double>(kDenom);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double quantile(std::span<const double> values, double q) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(sorted, q);
}

FiveNumber five_number(std::span<const double> values) {
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  if (s.empty()) throw ConfigError("summary of an empty set");
  return {s.front(), quantile_sorted(s, 0.25), quantile_sorted(s, 0.5), quantile_sorted(s, 0.75), s.back()};
}

}  // namespace latent_steer
