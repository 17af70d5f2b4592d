#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "latent_steer/image.hpp"
#include "latent_steer/model.hpp"
#include "latent_steer/scene.hpp"
#include "latent_steer/stats.hpp"

namespace latent_steer {

// Maps a latent vector to an h x w x 3 reconstruction.
using Decoder = std::function<ImageD(std::span<const double>)>;
// Maps a latent vector to a steering prediction.
using SteeringHead = std::function<double(std::span<const double>)>;
using Encoder = std::function<LatentCode(const ImageF&)>;

// Per-pixel classifier: h x w x 3 image in [0,1] -> h x w x 1 class ids.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual ClassMap segment(const ImageF& image) const = 0;
};

// Returns the ground-truth map it was built with.
class OracleSegmenter final : public Segmenter {
 public:
  explicit OracleSegmenter(ClassMap truth) : truth_(std::move(truth)) {}
  ClassMap segment(const ImageF&) const override { return truth_; }

 private:
  ClassMap truth_;
};

struct Reconstructions {
  ImageD plus;
  ImageD minus;
};

// decode(z +/- 2 sigma_j e_j) for 1-based j.
Reconstructions perturb_reconstructions(const LatentCode& code, int j, const Decoder& decoder);

inline constexpr double kDegenerateMax = 1e-8;

struct DiffMask {
  ImageD delta;  // h x w x 1
  BoolMask mask;  // h x w x 1
  double cutoff = 0.0;
  // max(raw) <= kDegenerateMax: delta left unnormalized, mask empty.
  bool degenerate = false;
};

// Signed difference, mean over channels, scaled by its maximum, thresholded
// at the q-quantile (strictly greater).
DiffMask diff_and_binarize(const ImageD& plus, const ImageD& minus, double q = 0.9);

struct RegionCounts {
  int region_count = 0;
  std::map<int, int> class_counts;
  Image<int> labels;  // 0 outside the mask, regions numbered from 1 in scan order
};

// 4-connected components of mask; each region votes for the majority class
// of seg under it, lowest id on ties.
RegionCounts count_region_classes(const BoolMask& mask, const ClassMap& seg);

struct AlpDimensionResult {
  int dim = 0;  // 1-based
  ImageD xhat_plus;
  ImageD xhat_minus;
  ImageD delta;
  BoolMask mask;
  double cutoff = 0.0;
  bool degenerate = false;
  int region_count = 0;
  std::map<int, int> class_counts;
};

struct AlpOptions {
  double threshold_quantile = 0.9;
  // 1-based dimensions to analyze; empty means all.
  std::vector<int> dims;
};

// Results are ordered like opts.dims (or 1..M).
std::vector<AlpDimensionResult> alp_analyze(const LatentCode& code, const Decoder& decoder, const ClassMap& seg,
                                            const AlpOptions& opts = {});

// Encodes x with zero noise and segments it before running the analysis.
template <typename T>
std::vector<AlpDimensionResult> alp_analyze(const ImageF& x, const Model<T>& model, const Segmenter& segmenter,
                                            const AlpOptions& opts = {});

struct ImpactRecord {
  int dim = 0;
  double y0 = 0, y_plus = 0, y_minus = 0;
  double d_minus = 0, d_plus = 0, d_per = 0;
  double impact = 0;
};

ImpactRecord make_impact_record(int dim, double y0, double y_plus, double y_minus);

ImpactRecord impact_score(const LatentCode& code, int j, const SteeringHead& head);

enum class PerturbReference { kTruth, kUnperturbed };

struct AggregateOptions {
  std::size_t sample_size = 1000;
  double decile = 0.1;
  PerturbReference reference = PerturbReference::kTruth;
};

struct DimensionAggregate {
  int dim = 0;
  MeanStd minus_error;  // squared steering error at -2 sigma
  MeanStd plus_error;   // squared steering error at +2 sigma
  FiveNumber top_impact;
  FiveNumber bottom_impact;
};

struct ImpactAggregate {
  std::vector<std::size_t> frames;    // dataset indices in the sample
  std::vector<double> frame_error;    // (y0 - y)^2 per sampled frame
  MeanStd sample_error;
  FiveNumber sample_error_summary;
  std::vector<std::size_t> top_frames;     // positions into frames, worst first
  std::vector<std::size_t> bottom_frames;  // positions into frames, best first
  std::vector<std::vector<ImpactRecord>> records;  // [sample position][dim - 1]
  std::vector<DimensionAggregate> dims;
};

// Evenly strided sample: position i takes frame floor(i * n / sample_size).
std::vector<std::size_t> strided_sample(std::size_t n, std::size_t sample_size);

// Number of frames in a decile slice: ceil(decile * n), at least 1.
std::size_t decile_count(std::size_t n, double decile);

// Summaries over a precomputed record table; used by aggregate_impact.
std::vector<DimensionAggregate> summarize_impacts(const std::vector<std::vector<ImpactRecord>>& records,
                                                  std::span<const std::size_t> top,
                                                  std::span<const std::size_t> bottom);

ImpactAggregate aggregate_impact(std::span<const SceneSample> data, const Encoder& encoder, const SteeringHead& head,
                                 const AggregateOptions& opts);

template <typename T>
ImpactAggregate aggregate_impact(std::span<const SceneSample> data, const Model<T>& model,
                                 const AggregateOptions& opts);

}  // namespace latent_steer
