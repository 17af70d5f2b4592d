#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace latent_steer {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};

// Single-pass Welford accumulation.
MeanStd mean_std(std::span<const double> values);

// Quantile with linear interpolation between order statistics of the sorted
// values at position q*(n-1). q is snapped to a multiple of 1e-6 and the
// position is split into integer and fractional parts with integer
// arithmetic, so e.g. q=0.9 over 10 values interpolates with weight exactly
// 0.1.
double quantile_sorted(std::span<const double> sorted, double q);
double quantile(std::span<const double> values, double q);

struct FiveNumber {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

FiveNumber five_number(std::span<const double> values);

}  // namespace latent_steer
