#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "fixtures.hpp"
#include "latent_steer/alp.hpp"
#include "latent_steer/error.hpp"
#include "latent_steer/rng.hpp"

using namespace latent_steer;
using latent_steer::testing::random_frames;
using latent_steer::testing::toy_config;

namespace {

LatentCode make_code(std::vector<double> z, std::vector<double> log_var) {
  LatentCode c;
  c.mu = z;
  c.z = std::move(z);
  c.log_var = std::move(log_var);
  return c;
}

// D(z) = W z as an h x w x c image, W column-major per latent.
struct LinearDecoder {
  int h, w, c;
  std::vector<double> weight;  // [pixel * c][m]
  int m;
  ImageD operator()(std::span<const double> z) const {
    ImageD out(h, w, c);
    for (std::size_t p = 0; p < out.size(); ++p)
      for (int j = 0; j < m; ++j) out.data[p] += weight[p * m + j] * z[j];
    return out;
  }
};

ImageD channel_mean_diff(const ImageD& a, const ImageD& b) {
  ImageD out(a.h, a.w, 1);
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x) {
      double s = 0;
      for (int ch = 0; ch < a.c; ++ch) s += a.at(y, x, ch) - b.at(y, x, ch);
      out.at(y, x) = s / a.c;
    }
  return out;
}

}  // namespace

TEST_CASE("zero spread or an ignored coordinate gives identical reconstructions") {
  Rng rng(1);
  LinearDecoder dec{4, 5, 3, {}, 3};
  dec.weight.resize(4 * 5 * 3 * 3);
  for (auto& v : dec.weight) v = rng.normal();
  const auto code = make_code({0.3, -0.2, 1.0}, {0.1, -std::numeric_limits<double>::infinity(), 0.4});
  const auto r = perturb_reconstructions(code, 2, dec);
  CHECK(r.plus == r.minus);

  auto ignoring = dec;
  for (std::size_t p = 0; p < 4 * 5 * 3; ++p) ignoring.weight[p * 3 + 0] = 0.0;
  const auto r1 = perturb_reconstructions(code, 1, ignoring);
  CHECK(r1.plus == r1.minus);
}

TEST_CASE("linear decoder difference is four sigma times its column") {
  Rng rng(2);
  LinearDecoder dec{3, 4, 3, {}, 4};
  dec.weight.resize(3 * 4 * 3 * 4);
  for (auto& v : dec.weight) v = rng.normal();
  const auto code = make_code({0.5, -1.0, 0.25, 2.0}, {0.3, -0.7, 1.1, 0.0});
  for (int j = 1; j <= 4; ++j) {
    const auto r = perturb_reconstructions(code, j, dec);
    const double sigma = std::exp(code.log_var[j - 1] / 2);
    for (std::size_t p = 0; p < r.plus.size(); ++p)
      CHECK(r.plus.data[p] - r.minus.data[p] == doctest::Approx(4 * sigma * dec.weight[p * 4 + (j - 1)]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(perturb_reconstructions(code, 0, dec), IndexError);
  CHECK_THROWS_AS(perturb_reconstructions(code, 5, dec), IndexError);
}

TEST_CASE("identical reconstructions are degenerate") {
  const ImageD a(4, 4, 3, 0.3);
  const auto d = diff_and_binarize(a, a);
  CHECK(d.degenerate);
  for (double v : d.delta.data) CHECK(v == 0.0);
  for (auto v : d.mask.data) CHECK(v == 0);
  // A purely negative difference also has no positive maximum.
  const ImageD b(4, 4, 3, 0.5);
  CHECK(diff_and_binarize(a, b).degenerate);
  CHECK_THROWS_AS(diff_and_binarize(a, ImageD(4, 5, 3)), DimensionError);
}

TEST_CASE("one hot row of ten has cutoff one tenth") {
  ImageD plus(1, 10, 1, 0.0), minus(1, 10, 1, 0.0);
  plus.at(0, 6) = 1.0;
  const auto d = diff_and_binarize(plus, minus);
  CHECK_FALSE(d.degenerate);
  CHECK(d.cutoff == 0.1);
  for (int x = 0; x < 10; ++x) CHECK(d.mask.at(0, x) == (x == 6 ? 1 : 0));
}

TEST_CASE("delta is the channel mean scaled by its maximum") {
  Rng rng(3);
  ImageD plus(5, 6, 3), minus(5, 6, 3);
  for (auto& v : plus.data) v = rng.uniform();
  for (auto& v : minus.data) v = rng.uniform();
  const auto raw = channel_mean_diff(plus, minus);
  const double peak = *std::max_element(raw.data.begin(), raw.data.end());
  const auto d = diff_and_binarize(plus, minus);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    CHECK(d.delta.data[i] == doctest::Approx(raw.data[i] / peak).epsilon(1e-14));
    CHECK(d.mask.data[i] == (d.delta.data[i] > d.cutoff ? 1 : 0));
  }
  CHECK(d.delta.at(0, 0) <= 1.0);
}

TEST_CASE("swapping the reconstructions negates the raw difference") {
  Rng rng(4);
  ImageD plus(4, 4, 3), minus(4, 4, 3);
  for (auto& v : plus.data) v = rng.uniform();
  for (auto& v : minus.data) v = rng.uniform();
  const auto fwd = channel_mean_diff(plus, minus);
  const auto bwd = channel_mean_diff(minus, plus);
  const double pf = *std::max_element(fwd.data.begin(), fwd.data.end());
  const double pb = *std::max_element(bwd.data.begin(), bwd.data.end());
  const auto a = diff_and_binarize(plus, minus);
  const auto b = diff_and_binarize(minus, plus);
  for (std::size_t i = 0; i < fwd.size(); ++i) CHECK(a.delta.data[i] * pf == doctest::Approx(-b.delta.data[i] * pb));

  for (int t = 0; t < 100; ++t) {
    const double y0 = rng.uniform(-1, 1), yp = rng.uniform(-1, 1), ym = rng.uniform(-1, 1);
    CHECK(make_impact_record(1, y0, yp, ym).d_per == make_impact_record(1, y0, ym, yp).d_per);
  }
}

TEST_CASE("mask cardinality bound on distinct random deltas") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    ImageD plus(8, 8, 1), minus(8, 8, 1, 0.0);
    for (auto& v : plus.data) v = rng.uniform(-1, 1);
    const auto d = diff_and_binarize(plus, minus);
    const int marked = std::count(d.mask.data.begin(), d.mask.data.end(), 1);
    CHECK(marked <= 7);
  }
}

TEST_CASE("region counting hand examples") {
  BoolMask mask(3, 3, 1, 0);
  ClassMap seg(3, 3, 1, static_cast<std::uint8_t>(SceneClass::kRoadside));
  auto empty = count_region_classes(mask, seg);
  CHECK(empty.region_count == 0);
  CHECK(empty.class_counts.empty());

  mask.at(0, 0) = mask.at(0, 1) = 1;
  seg.at(0, 0) = seg.at(0, 1) = static_cast<std::uint8_t>(SceneClass::kRoad);
  mask.at(2, 2) = 1;
  seg.at(2, 2) = static_cast<std::uint8_t>(SceneClass::kVehicle);
  const auto r = count_region_classes(mask, seg);
  CHECK(r.region_count == 2);
  CHECK(r.class_counts == std::map<int, int>{{1, 1}, {3, 1}});
  CHECK(r.labels.at(0, 0) == 1);
  CHECK(r.labels.at(0, 1) == 1);
  CHECK(r.labels.at(2, 2) == 2);

  // Diagonal neighbours are separate regions under 4-connectivity.
  BoolMask diag(2, 2, 1, 0);
  diag.at(0, 0) = diag.at(1, 1) = 1;
  CHECK(count_region_classes(diag, ClassMap(2, 2, 1, 1)).region_count == 2);

  // A two-pixel region split evenly between classes 4 and 2 votes for 2.
  BoolMask pair(1, 2, 1, 1);
  ClassMap split(1, 2, 1, 0);
  split.at(0, 0) = 4;
  split.at(0, 1) = 2;
  CHECK(count_region_classes(pair, split).class_counts == std::map<int, int>{{2, 1}});
  CHECK_THROWS_AS(count_region_classes(mask, ClassMap(3, 4, 1)), DimensionError);
}

TEST_CASE("region labels partition the mask") {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    BoolMask mask(8, 8, 1, 0);
    ClassMap seg(8, 8, 1, 0);
    for (auto& v : mask.data) v = rng.bernoulli(0.45);
    for (auto& v : seg.data) v = static_cast<std::uint8_t>(rng.below(5));
    const auto r = count_region_classes(mask, seg);
    int total = 0;
    for (const auto& [cls, n] : r.class_counts) total += n;
    CHECK(total == r.region_count);
    std::set<int> seen;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const int l = r.labels.at(y, x);
        CHECK((l > 0) == (mask.at(y, x) == 1));
        if (l > 0) seen.insert(l);
        if (x + 1 < 8 && mask.at(y, x) && mask.at(y, x + 1)) CHECK(l == r.labels.at(y, x + 1));
        if (y + 1 < 8 && mask.at(y, x) && mask.at(y + 1, x)) CHECK(l == r.labels.at(y + 1, x));
      }
    CHECK(static_cast<int>(seen.size()) == r.region_count);
  }
}

TEST_CASE("alp on a decoder with one dimension wired to a patch") {
  // Dim 2 adds a bump inside rows 3..5, cols 4..7 of a 12x12 image, dim 1
  // shifts the whole image and dim 3 is ignored.
  const int h = 12, w = 12;
  const Decoder dec = [&](std::span<const double> z) {
    ImageD img(h, w, 3, 0.5 + 0.1 * z[0]);
    for (int y = 3; y <= 5; ++y)
      for (int x = 4; x <= 7; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) += z[1] * (1.0 + 0.1 * (y * w + x));
    return img;
  };
  const auto code = make_code({0.2, 0.1, -0.3}, {0.0, -0.5, 0.2});
  const ClassMap seg(h, w, 1, 1);
  const auto results = alp_analyze(code, dec, seg);
  REQUIRE(results.size() == 3);
  for (int j = 0; j < 3; ++j) CHECK(results[j].dim == j + 1);
  int marked = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (results[1].mask.at(y, x)) {
        ++marked;
        CHECK(y >= 1);
        CHECK(y <= 7);
        CHECK(x >= 2);
        CHECK(x <= 9);
      }
  CHECK(marked > 0);
  CHECK(results[2].degenerate);
  CHECK(std::count(results[2].mask.data.begin(), results[2].mask.data.end(), 1) == 0);
  CHECK(results[2].region_count == 0);
  CHECK(results[2].class_counts.empty());
}

TEST_CASE("alp dimension filter, ordering and errors") {
  const Decoder dec = [](std::span<const double> z) { return ImageD(4, 4, 3, z[0]); };
  const auto code = make_code({0, 0, 0, 0}, {0, 0, 0, 0});
  AlpOptions opts;
  opts.dims = {3};
  auto r = alp_analyze(code, dec, ClassMap(4, 4, 1), opts);
  REQUIRE(r.size() == 1);
  CHECK(r[0].dim == 3);
  opts.dims = {4, 1, 2};
  r = alp_analyze(code, dec, ClassMap(4, 4, 1), opts);
  CHECK(r[0].dim == 4);
  CHECK(r[1].dim == 1);
  CHECK(r[2].dim == 2);
  opts.dims = {5};
  CHECK_THROWS_AS(alp_analyze(code, dec, ClassMap(4, 4, 1), opts), IndexError);
  CHECK_THROWS_AS(alp_analyze(code, dec, ClassMap(4, 5, 1)), InterfaceError);
}

namespace {

class WrongSizeSegmenter final : public Segmenter {
 public:
  ClassMap segment(const ImageF& image) const override { return ClassMap(image.h + 1, image.w, 1); }
};

}  // namespace

TEST_CASE("alp on a model is deterministic and checks the segmenter") {
  const auto model = initialize_model<double>(toy_config(), 3);
  const auto frame = random_frames(1, 8, 8, 4).front();
  const OracleSegmenter seg(ClassMap(8, 8, 1, 1));
  const auto a = alp_analyze(frame.image, model, seg);
  const auto b = alp_analyze(frame.image, model, seg);
  REQUIRE(a.size() == 3);
  for (std::size_t j = 0; j < a.size(); ++j) {
    CHECK(a[j].dim == static_cast<int>(j + 1));
    CHECK(a[j].delta == b[j].delta);
    CHECK(a[j].mask == b[j].mask);
    CHECK(a[j].class_counts == b[j].class_counts);
    int total = 0;
    for (const auto& [cls, n] : a[j].class_counts) total += n;
    CHECK(total == a[j].region_count);
  }
  CHECK_THROWS_AS(alp_analyze(frame.image, model, WrongSizeSegmenter{}), InterfaceError);
}

TEST_CASE("a dimension encoding lane offset lights up road pixels") {
  // Straight empty road; dim 2 moves a bright lane line sideways in the lower rows.
  SceneConfig sc;
  sc.h = 24;
  sc.w = 40;
  sc.frames = 1;
  sc.increment_scale = 0.0;
  sc.vehicle_rate = 0.0;
  sc.texture_noise = 0.0;
  const auto scene = generate_sequence(sc).front();
  const Decoder dec = [&](std::span<const double> z) {
    ImageD img(24, 40, 3);
    for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = scene.image.data[i];
    const double centre = 20.0 + 2.0 * z[1];
    for (int y = 18; y < 24; ++y)
      for (int x = 0; x < 40; ++x) {
        const double g = std::exp(-0.5 * (x + 0.5 - centre) * (x + 0.5 - centre));
        for (int c = 0; c < 3; ++c) img.at(y, x, c) += 0.5 * g;
      }
    return img;
  };
  const auto code = make_code({0.0, 0.0}, {0.0, 0.0});
  AlpOptions opts;
  opts.dims = {2};
  const auto r = alp_analyze(code, dec, scene.seg_mask, opts).front();
  REQUIRE(r.region_count > 0);
  int best_class = -1, best = 0;
  for (const auto& [cls, n] : r.class_counts)
    if (n > best) best = n, best_class = cls;
  CHECK((best_class == 1 || best_class == 2));
}

TEST_CASE("impact score identities") {
  CHECK(make_impact_record(1, 0.0, 0.3, -0.3).impact == doctest::Approx(0.4).epsilon(1e-15));
  for (double a : {1e-3, 0.25, 0.7, 1.0}) {
    const auto r = make_impact_record(2, 0.0, a, -a);
    CHECK(std::abs(r.impact - 4 * a / 3) < 1e-12);
  }
  Rng rng(7);
  for (int t = 0; t < 10000; ++t) {
    const auto r = make_impact_record(1, rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const double mean = (r.d_minus + r.d_plus + r.d_per) / 3.0;
    CHECK(std::bit_cast<std::uint64_t>(r.impact) == std::bit_cast<std::uint64_t>(mean));
    CHECK(r.d_minus >= 0);
    CHECK(r.d_plus >= 0);
    CHECK(r.d_per >= 0);
  }
}

TEST_CASE("impact score on heads with structure") {
  const SteeringHead ignores_second = [](std::span<const double> z) { return std::tanh(z[0] - 0.5 * z[2]); };
  const auto code = make_code({0.2, 0.7, -0.1}, {0.1, 0.3, -0.2});
  CHECK(impact_score(code, 2, ignores_second).impact == 0.0);
  CHECK(impact_score(code, 1, ignores_second).impact > 0.0);
  const auto flat = make_code({0.2, 0.7, -0.1}, {0.1, -std::numeric_limits<double>::infinity(), -0.2});
  const SteeringHead linear = [](std::span<const double> z) { return z[0] + z[1] + z[2]; };
  CHECK(impact_score(flat, 2, linear).impact == 0.0);
  // Linear head: y+- = y0 +- 2 sigma, so I = (2s + 2s + 4s)/3.
  const double s = std::exp(0.05);
  CHECK(impact_score(code, 1, linear).impact == doctest::Approx(8 * s / 3).epsilon(1e-12));
  CHECK_THROWS_AS(impact_score(code, 4, linear), IndexError);
}

TEST_CASE("sample and decile sizes") {
  CHECK(strided_sample(10, 4) == std::vector<std::size_t>{0, 2, 5, 7});
  CHECK(strided_sample(5, 5) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(strided_sample(5, 0), ConfigError);
  CHECK_THROWS_AS(strided_sample(5, 6), ConfigError);
  CHECK(decile_count(1000, 0.1) == 100);
  CHECK(decile_count(10, 0.1) == 1);
  CHECK(decile_count(11, 0.1) == 2);
  CHECK(decile_count(1, 0.1) == 1);
  CHECK_THROWS_AS(decile_count(10, 0.0), ConfigError);
  CHECK_THROWS_AS(decile_count(10, 0.6), ConfigError);
}

TEST_CASE("quartile summaries against a sort oracle") {
  Rng rng(8);
  std::vector<std::vector<ImpactRecord>> records(100);
  for (auto& row : records)
    for (int j = 1; j <= 4; ++j) row.push_back(make_impact_record(j, rng.normal(), rng.normal(), rng.normal()));
  std::vector<std::size_t> top, bottom;
  for (std::size_t i = 0; i < 100; ++i) (i % 3 == 0 ? top : bottom).push_back(i);
  const auto agg = summarize_impacts(records, top, bottom);
  REQUIRE(agg.size() == 4);
  auto oracle = [](std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * (v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
  };
  for (int j = 0; j < 4; ++j) {
    for (const auto* set : {&top, &bottom}) {
      std::vector<double> v;
      for (auto p : *set) v.push_back(records[p][j].impact);
      const auto& f = set == &top ? agg[j].top_impact : agg[j].bottom_impact;
      CHECK(std::abs(f.min - oracle(v, 0.0)) < 1e-12);
      CHECK(std::abs(f.q1 - oracle(v, 0.25)) < 1e-12);
      CHECK(std::abs(f.median - oracle(v, 0.5)) < 1e-12);
      CHECK(std::abs(f.q3 - oracle(v, 0.75)) < 1e-12);
      CHECK(std::abs(f.max - oracle(v, 1.0)) < 1e-12);
    }
  }
}

TEST_CASE("aggregate of a single frame collapses to points") {
  const auto model = initialize_model<double>(toy_config(), 5);
  const auto data = random_frames(6, 8, 8, 9);
  AggregateOptions opts;
  opts.sample_size = 1;
  const auto agg = aggregate_impact<double>(data, model, opts);
  CHECK(agg.frames == std::vector<std::size_t>{0});
  CHECK(agg.top_frames == std::vector<std::size_t>{0});
  CHECK(agg.bottom_frames == std::vector<std::size_t>{0});
  for (const auto& d : agg.dims) {
    CHECK(d.top_impact.min == d.top_impact.max);
    CHECK(d.bottom_impact.median == d.top_impact.median);
    CHECK(d.minus_error.std == 0.0);
  }
  opts.sample_size = 0;
  CHECK_THROWS_AS(aggregate_impact<double>(data, model, opts), ConfigError);
}

TEST_CASE("aggregate ranks frames and uses the chosen reference") {
  auto model = initialize_model<double>(toy_config(), 6);
  const auto data = random_frames(40, 8, 8, 10);
  AggregateOptions opts;
  opts.sample_size = 20;
  opts.decile = 0.1;
  const auto agg = aggregate_impact<double>(data, model, opts);
  REQUIRE(agg.top_frames.size() == 2);
  REQUIRE(agg.bottom_frames.size() == 2);
  const auto sorted = [&] {
    auto e = agg.frame_error;
    std::sort(e.begin(), e.end());
    return e;
  }();
  CHECK(agg.frame_error[agg.top_frames[0]] == sorted.back());
  CHECK(agg.frame_error[agg.bottom_frames[0]] == sorted.front());
  CHECK(agg.sample_error_summary.max == sorted.back());

  opts.reference = PerturbReference::kUnperturbed;
  const auto rel = aggregate_impact<double>(data, model, opts);
  for (std::size_t j = 0; j < rel.dims.size(); ++j) {
    double s = 0;
    for (const auto& row : rel.records) s += (row[j].y_minus - row[j].y0) * (row[j].y_minus - row[j].y0);
    CHECK(rel.dims[j].minus_error.mean == doctest::Approx(s / 20).epsilon(1e-12));
  }
}

TEST_CASE("a model with zero synaptic weights has zero impact everywhere") {
  auto model = initialize_model<double>(toy_config(), 7);
  for (auto& v : model.param("ncp.weight")) v = 0.0;
  const auto data = random_frames(20, 8, 8, 11);
  AggregateOptions opts;
  opts.sample_size = 20;
  const auto agg = aggregate_impact<double>(data, model, opts);
  for (const auto& row : agg.records)
    for (const auto& r : row) CHECK(r.impact == 0.0);
  for (const auto& d : agg.dims) {
    CHECK(d.top_impact.max == 0.0);
    CHECK(d.bottom_impact.max == 0.0);
  }
}
