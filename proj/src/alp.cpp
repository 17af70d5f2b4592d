#include "latent_steer/alp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>

#include "latent_steer/error.hpp"

namespace latent_steer {

namespace {

void check_dim(int j, std::size_t m) {
  if (j < 1 || static_cast<std::size_t>(j) > m) {
    throw IndexError("latent dimension " + std::to_string(j) + " outside [1, " + std::to_string(m) + "]");
  }
}

std::vector<double> shifted(const LatentCode& code, int j, double sign) {
  std::vector<double> z = code.z;
  z[j - 1] += sign * 2.0 * std::exp(0.5 * code.log_var[j - 1]);
  return z;
}

// Runs body(i) for i in [0, n) on OpenMP threads; the first exception (by
// index) is rethrown after the loop.
template <typename F>
void parallel_for_each(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

Reconstructions perturb_reconstructions(const LatentCode& code, int j, const Decoder& decoder) {
  check_dim(j, code.z.size());
  if (code.log_var.size() != code.z.size()) throw DimensionError("latent code fields differ in length");
  Reconstructions out;
  out.plus = decoder(shifted(code, j, +1.0));
  out.minus = decoder(shifted(code, j, -1.0));
  return out;
}

DiffMask diff_and_binarize(const ImageD& plus, const ImageD& minus, double q) {
  if (!plus.same_shape(minus)) throw DimensionError("reconstructions differ in shape");
  if (plus.c < 1) throw DimensionError("reconstructions have no channels");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("threshold quantile must lie in [0,1]");
  DiffMask out;
  out.delta = ImageD(plus.h, plus.w, 1);
  out.mask = BoolMask(plus.h, plus.w, 1, 0);
  for (int y = 0; y < plus.h; ++y) {
    for (int x = 0; x < plus.w; ++x) {
      double sum = 0.0;
      for (int ch = 0; ch < plus.c; ++ch) sum += plus.at(y, x, ch) - minus.at(y, x, ch);
      out.delta.at(y, x) = sum / plus.c;
    }
  }
  if (out.delta.data.empty()) {
    out.degenerate = true;
    return out;
  }
  const double peak = *std::max_element(out.delta.data.begin(), out.delta.data.end());
  if (!(peak > kDegenerateMax)) {
    out.degenerate = true;
    return out;
  }
  for (auto& v : out.delta.data) v /= peak;
  out.cutoff = quantile(out.delta.data, q);
  for (std::size_t i = 0; i < out.delta.data.size(); ++i) out.mask.data[i] = out.delta.data[i] > out.cutoff ? 1 : 0;
  return out;
}

RegionCounts count_region_classes(const BoolMask& mask, const ClassMap& seg) {
  if (mask.h != seg.h || mask.w != seg.w) throw DimensionError("mask and segmentation differ in shape");
  RegionCounts out;
  out.labels = Image<int>(mask.h, mask.w, 1, 0);
  std::vector<int> stack;
  std::array<int, 256> votes{};
  for (int y0 = 0; y0 < mask.h; ++y0) {
    for (int x0 = 0; x0 < mask.w; ++x0) {
      if (!mask.at(y0, x0) || out.labels.at(y0, x0) != 0) continue;
      const int label = ++out.region_count;
      votes.fill(0);
      out.labels.at(y0, x0) = label;
      stack.assign(1, y0 * mask.w + x0);
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int y = p / mask.w, x = p % mask.w;
        ++votes[seg.at(y, x)];
        const int ny[4] = {y - 1, y + 1, y, y};
        const int nx[4] = {x, x, x - 1, x + 1};
        for (int k = 0; k < 4; ++k) {
          if (ny[k] < 0 || ny[k] >= mask.h || nx[k] < 0 || nx[k] >= mask.w) continue;
          if (!mask.at(ny[k], nx[k]) || out.labels.at(ny[k], nx[k]) != 0) continue;
          out.labels.at(ny[k], nx[k]) = label;
          stack.push_back(ny[k] * mask.w + nx[k]);
        }
      }
      // max_element returns the first maximum, i.e. the lowest class id.
      const int majority = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
      ++out.class_counts[majority];
    }
  }
  return out;
}

std::vector<AlpDimensionResult> alp_analyze(const LatentCode& code, const Decoder& decoder, const ClassMap& seg,
                                            const AlpOptions& opts) {
  const std::size_t m = code.z.size();
  std::vector<int> dims = opts.dims;
  if (dims.empty()) {
    dims.resize(m);
    std::iota(dims.begin(), dims.end(), 1);
  }
  for (int j : dims) check_dim(j, m);

  std::vector<AlpDimensionResult> results(dims.size());
  parallel_for_each(dims.size(), [&](std::size_t i) {
    auto& r = results[i];
    r.dim = dims[i];
    auto rec = perturb_reconstructions(code, r.dim, decoder);
    auto dm = diff_and_binarize(rec.plus, rec.minus, opts.threshold_quantile);
    if (dm.delta.h != seg.h || dm.delta.w != seg.w) {
      throw InterfaceError("segmentation is " + std::to_string(seg.h) + "x" + std::to_string(seg.w) +
                           " but reconstructions are " + std::to_string(dm.delta.h) + "x" +
                           std::to_string(dm.delta.w));
    }
    auto rc = count_region_classes(dm.mask, seg);
    r.xhat_plus = std::move(rec.plus);
    r.xhat_minus = std::move(rec.minus);
    r.delta = std::move(dm.delta);
    r.mask = std::move(dm.mask);
    r.cutoff = dm.cutoff;
    r.degenerate = dm.degenerate;
    r.region_count = rc.region_count;
    r.class_counts = std::move(rc.class_counts);
  });
  return results;
}

template <typename T>
std::vector<AlpDimensionResult> alp_analyze(const ImageF& x, const Model<T>& model, const Segmenter& segmenter,
                                            const AlpOptions& opts) {
  const std::vector<double> zero(model.config.vae.latent_dim, 0.0);
  const auto code = encode(x, model, zero);
  const auto seg = segmenter.segment(x);
  if (seg.h != x.h || seg.w != x.w || seg.c != 1) {
    throw InterfaceError("segmenter returned a " + std::to_string(seg.h) + "x" + std::to_string(seg.w) + "x" +
                         std::to_string(seg.c) + " map for a " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                         " image");
  }
  const Decoder decoder = [&model](std::span<const double> z) { return decode(z, model); };
  return alp_analyze(code, decoder, seg, opts);
}

ImpactRecord make_impact_record(int dim, double y0, double y_plus, double y_minus) {
  ImpactRecord r;
  r.dim = dim;
  r.y0 = y0;
  r.y_plus = y_plus;
  r.y_minus = y_minus;
  r.d_minus = std::abs(y_minus - y0);
  r.d_plus = std::abs(y_plus - y0);
  r.d_per = std::abs(y_plus - y_minus);
  r.impact = (r.d_minus + r.d_plus + r.d_per) / 3.0;
  return r;
}

ImpactRecord impact_score(const LatentCode& code, int j, const SteeringHead& head) {
  check_dim(j, code.z.size());
  if (code.log_var.size() != code.z.size()) throw DimensionError("latent code fields differ in length");
  const double y0 = head(code.z);
  const double yp = head(shifted(code, j, +1.0));
  const double ym = head(shifted(code, j, -1.0));
  return make_impact_record(j, y0, yp, ym);
}

std::vector<std::size_t> strided_sample(std::size_t n, std::size_t sample_size) {
  if (sample_size == 0) throw ConfigError("impact sample is empty");
  if (sample_size > n) {
    throw ConfigError("sample size " + std::to_string(sample_size) + " exceeds dataset size " + std::to_string(n));
  }
  std::vector<std::size_t> out(sample_size);
  for (std::size_t i = 0; i < sample_size; ++i) out[i] = i * n / sample_size;
  return out;
}

std::size_t decile_count(std::size_t n, double decile) {
  if (!(decile > 0.0 && decile <= 0.5)) throw ConfigError("decile must lie in (0, 0.5]");
  // Snap like the quantile so 0.1 * 10 is exactly 1.
  const auto micro = static_cast<std::size_t>(std::llround(decile * 1e6));
  const std::size_t k = (micro * n + 999999) / 1000000;
  return std::max<std::size_t>(1, std::min(k, n));
}

std::vector<DimensionAggregate> summarize_impacts(const std::vector<std::vector<ImpactRecord>>& records,
                                                  std::span<const std::size_t> top,
                                                  std::span<const std::size_t> bottom) {
  if (records.empty()) throw ConfigError("no impact records");
  const std::size_t m = records.front().size();
  std::vector<DimensionAggregate> out(m);
  std::vector<double> vals;
  for (std::size_t j = 0; j < m; ++j) {
    out[j].dim = static_cast<int>(j + 1);
    vals.clear();
    for (auto p : top) vals.push_back(records.at(p).at(j).impact);
    out[j].top_impact = five_number(vals);
    vals.clear();
    for (auto p : bottom) vals.push_back(records.at(p).at(j).impact);
    out[j].bottom_impact = five_number(vals);
  }
  return out;
}

ImpactAggregate aggregate_impact(std::span<const SceneSample> data, const Encoder& encoder, const SteeringHead& head,
                                 const AggregateOptions& opts) {
  ImpactAggregate out;
  out.frames = strided_sample(data.size(), opts.sample_size);
  const std::size_t k = decile_count(out.frames.size(), opts.decile);
  const std::size_t n = out.frames.size();
  out.records.resize(n);
  out.frame_error.resize(n);

  parallel_for_each(n, [&](std::size_t i) {
    const auto& sample = data[out.frames[i]];
    const auto code = encoder(sample.image);
    auto& recs = out.records[i];
    recs.resize(code.z.size());
    for (std::size_t j = 0; j < code.z.size(); ++j) recs[j] = impact_score(code, static_cast<int>(j + 1), head);
    const double d = (recs.empty() ? head(code.z) : recs[0].y0) - sample.steering;
    out.frame_error[i] = d * d;
  });

  out.sample_error = mean_std(out.frame_error);
  out.sample_error_summary = five_number(out.frame_error);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.frame_error[a] > out.frame_error[b]; });
  out.top_frames.assign(order.begin(), order.begin() + k);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.frame_error[a] < out.frame_error[b]; });
  out.bottom_frames.assign(order.begin(), order.begin() + k);

  out.dims = summarize_impacts(out.records, out.top_frames, out.bottom_frames);
  std::vector<double> minus(n), plus(n);
  for (std::size_t j = 0; j < out.dims.size(); ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = out.records[i][j];
      const double ref = opts.reference == PerturbReference::kTruth ? data[out.frames[i]].steering : r.y0;
      minus[i] = (r.y_minus - ref) * (r.y_minus - ref);
      plus[i] = (r.y_plus - ref) * (r.y_plus - ref);
    }
    out.dims[j].minus_error = mean_std(minus);
    out.dims[j].plus_error = mean_std(plus);
  }
  return out;
}

template <typename T>
ImpactAggregate aggregate_impact(std::span<const SceneSample> data, const Model<T>& model,
                                 const AggregateOptions& opts) {
  const std::vector<double> zero(model.config.vae.latent_dim, 0.0);
  const Encoder encoder = [&](const ImageF& x) { return encode(x, model, zero); };
  const SteeringHead head = [&](std::span<const double> z) { return steer_single_step(z, model); };
  return aggregate_impact(data, encoder, head, opts);
}

template std::vector<AlpDimensionResult> alp_analyze<float>(const ImageF&, const Model<float>&, const Segmenter&,
                                                            const AlpOptions&);
template std::vector<AlpDimensionResult> alp_analyze<double>(const ImageF&, const Model<double>&, const Segmenter&,
                                                             const AlpOptions&);
template ImpactAggregate aggregate_impact<float>(std::span<const SceneSample>, const Model<float>&,
                                                 const AggregateOptions&);
template ImpactAggregate aggregate_impact<double>(std::span<const SceneSample>, const Model<double>&,
                                                  const AggregateOptions&);

}  // namespace latent_steer
