#include "latent_steer/scene.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "latent_steer/error.hpp"
#include "latent_steer/io_util.hpp"
#include "latent_steer/rng.hpp"

namespace latent_steer {

const char* scene_class_name(int id) {
  switch (id) {
    case 0: return "sky";
    case 1: return "road";
    case 2: return "lane-marking";
    case 3: return "vehicle";
    case 4: return "roadside";
    default: return "unknown";
  }
}

void SceneConfig::validate() const {
  if (h < 16 || w < 32) throw ConfigError("scene size must be at least 16x32, got " + std::to_string(h) + "x" + std::to_string(w));
  if (frames < 1) throw ConfigError("frames must be >= 1");
  if (!(curvature_smoothness > 0.0 && curvature_smoothness < 1.0)) throw ConfigError("curvature_smoothness must lie in (0,1)");
  if (!(curvature_scale > 0.0)) throw ConfigError("curvature_scale must be > 0");
  if (!(vehicle_rate >= 0.0 && vehicle_rate <= 1.0)) throw ConfigError("vehicle_rate must lie in [0,1]");
  if (!(increment_scale >= 0.0) || !(texture_noise >= 0.0)) throw ConfigError("increment_scale and texture_noise must be >= 0");
}

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kRoad{0.38, 0.38, 0.40};
constexpr Rgb kLane{0.95, 0.93, 0.85};
constexpr Rgb kVehicle{0.80, 0.16, 0.12};
constexpr Rgb kRoadside{0.28, 0.55, 0.22};
constexpr Rgb kSkyTop{0.45, 0.62, 0.92};
constexpr Rgb kSkyHorizon{0.75, 0.85, 0.97};

constexpr double kBendGain = 0.45;    // lateral road shift at the horizon per unit steering, in widths
constexpr double kDashPeriod = 2.0;
constexpr double kDashSpeed = 0.35;  // dash phase advance per frame

struct Vehicle {
  bool visible = false;
  double depth = 0;    // 0 = bottom row, 1 = horizon
  double lateral = 0;  // fraction of road half-width
};

class Renderer {
 public:
  Renderer(int h, int w) : h_(h), w_(w), horizon_(static_cast<int>(std::lround(0.4 * h))) {}

  double depth_of_row(int r) const { return static_cast<double>(h_ - 1 - r) / (h_ - 1 - horizon_); }
  double row_of_depth(double d) const { return (h_ - 1) - d * (h_ - 1 - horizon_); }
  double center(double d, double steering) const { return 0.5 * w_ + steering * kBendGain * w_ * d * d; }
  double half_width(double d) const { return w_ * (0.40 * (1.0 - d) + 0.03 * d); }
  double lane_half_width(double d) const { return std::max(0.6, 0.025 * w_ * (1.0 - d)); }

  static bool dash_visible(double d, double phase) {
    const double dist = 1.0 / (1.0 - 0.92 * d);
    const double t = (dist + phase) / kDashPeriod;
    return t - std::floor(t) < 0.5;
  }

  void render(double steering, double phase, const Vehicle& vehicle, SceneSample& out) const {
    double vx0 = 0, vx1 = 0, vy0 = 0, vy1 = 0;
    if (vehicle.visible) {
      const double xc = center(vehicle.depth, steering) + vehicle.lateral * half_width(vehicle.depth);
      const double vw = 0.7 * half_width(vehicle.depth);
      const double vh = 0.6 * vw;
      vy1 = row_of_depth(vehicle.depth) + 0.5;
      vy0 = vy1 - vh;
      vx0 = xc - 0.5 * vw;
      vx1 = xc + 0.5 * vw;
    }
    for (int r = 0; r < h_; ++r) {
      const double py = r + 0.5;
      for (int x = 0; x < w_; ++x) {
        const double px = x + 0.5;
        SceneClass cls;
        if (vehicle.visible && px >= vx0 && px < vx1 && py >= vy0 && py < vy1) {
          cls = SceneClass::kVehicle;
        } else if (r < horizon_) {
          cls = SceneClass::kSky;
        } else {
          const double d = depth_of_row(r);
          const double dx = std::abs(px - center(d, steering));
          if (dx < lane_half_width(d) && dash_visible(d, phase)) {
            cls = SceneClass::kLaneMarking;
          } else if (dx < half_width(d)) {
            cls = SceneClass::kRoad;
          } else {
            cls = SceneClass::kRoadside;
          }
        }
        out.seg_mask.at(r, x) = static_cast<std::uint8_t>(cls);
        Rgb col{};
        switch (cls) {
          case SceneClass::kSky: {
            const double t = static_cast<double>(r) / std::max(1, horizon_ - 1);
            col = {kSkyTop.r + t * (kSkyHorizon.r - kSkyTop.r), kSkyTop.g + t * (kSkyHorizon.g - kSkyTop.g),
                   kSkyTop.b + t * (kSkyHorizon.b - kSkyTop.b)};
            break;
          }
          case SceneClass::kRoad: col = kRoad; break;
          case SceneClass::kLaneMarking: col = kLane; break;
          case SceneClass::kVehicle: col = kVehicle; break;
          case SceneClass::kRoadside: {
            const double shade = 1.0 - 0.25 * depth_of_row(r);
            col = {kRoadside.r * shade, kRoadside.g * shade, kRoadside.b * shade};
            break;
          }
        }
        out.image.at(r, x, 0) = static_cast<float>(col.r);
        out.image.at(r, x, 1) = static_cast<float>(col.g);
        out.image.at(r, x, 2) = static_cast<float>(col.b);
      }
    }
  }

 private:
  int h_, w_, horizon_;
};

}  // namespace

std::vector<SceneSample> generate_sequence(const SceneConfig& config) {
  config.validate();
  Rng rng(config.seed);
  Renderer renderer(config.h, config.w);
  std::vector<SceneSample> samples;
  samples.reserve(config.frames);

  const double s = config.curvature_smoothness;
  double curvature = 0.0;
  double phase = 0.0;
  for (int t = 0; t < config.frames; ++t) {
    curvature = s * curvature + (1.0 - s) * config.increment_scale * rng.normal();
    const double steering = std::clamp(curvature / config.curvature_scale, -1.0, 1.0);

    Vehicle vehicle;
    vehicle.visible = rng.bernoulli(config.vehicle_rate);
    if (vehicle.visible) {
      vehicle.depth = rng.uniform(0.15, 0.7);
      vehicle.lateral = rng.uniform(-0.6, 0.6);
    }

    SceneSample sample{ImageF(config.h, config.w, 3), static_cast<float>(steering), ClassMap(config.h, config.w, 1)};
    renderer.render(steering, phase, vehicle, sample);
    if (config.texture_noise > 0.0) {
      for (auto& v : sample.image.data) {
        const double n = rng.uniform(-config.texture_noise, config.texture_noise);
        v = static_cast<float>(std::clamp(static_cast<double>(v) + n, 0.0, 1.0));
      }
    }
    samples.push_back(std::move(sample));
    phase += kDashSpeed;
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Dataset file format

namespace {

constexpr std::uint8_t kMagic[4] = {'V', 'N', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 5 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated payload reading ") + what, pos_);
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::uint8_t u8() { return bytes_[pos_++]; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_dataset(const std::vector<SceneSample>& samples) {
  if (samples.empty()) throw ConfigError("cannot write an empty dataset");
  const int h = samples.front().image.h;
  const int w = samples.front().image.w;
  for (const auto& s : samples) {
    if (s.image.h != h || s.image.w != w || s.image.c != 3 || s.seg_mask.h != h || s.seg_mask.w != w ||
        s.seg_mask.c != 1) {
      throw DimensionError("dataset samples must share one shape");
    }
  }
  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + samples.size() * (pixels * 3 * 4 + 4 + pixels));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(h));
  put_u32(out, static_cast<std::uint32_t>(w));
  put_u32(out, 3);
  put_u32(out, static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    for (float v : s.image.data) put_f32(out, v);
    put_f32(out, s.steering);
    out.insert(out.end(), s.seg_mask.data.begin(), s.seg_mask.data.end());
  }
  return out;
}

std::vector<SceneSample> decode_dataset(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  in.need(4, "magic");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) throw FormatError("bad magic, expected \"VNCP\"", 0);
  for (int i = 0; i < 4; ++i) in.u8();
  const std::size_t version_at = in.offset();
  if (const auto version = in.u32("version"); version != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version), version_at);
  }
  const std::size_t dims_at = in.offset();
  const auto h = in.u32("height");
  const auto w = in.u32("width");
  const auto c = in.u32("channels");
  const auto frames = in.u32("frame count");
  if (c != 3) throw FormatError("channel count must be 3, got " + std::to_string(c), dims_at + 8);
  if (h == 0 || w == 0 || h > 1u << 14 || w > 1u << 14) throw FormatError("implausible image size", dims_at);

  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  std::vector<SceneSample> samples;
  samples.reserve(frames);
  for (std::uint32_t f = 0; f < frames; ++f) {
    SceneSample s{ImageF(static_cast<int>(h), static_cast<int>(w), 3), 0.0f,
                  ClassMap(static_cast<int>(h), static_cast<int>(w), 1)};
    in.need(pixels * 3 * 4 + 4 + pixels, ("frame " + std::to_string(f)).c_str());
    for (auto& v : s.image.data) v = in.f32("image");
    s.steering = in.f32("steering");
    for (auto& v : s.seg_mask.data) v = in.u8();
    samples.push_back(std::move(s));
  }
  if (in.offset() != bytes.size()) throw FormatError("trailing bytes after last frame", in.offset());
  return samples;
}

void write_dataset(const std::vector<SceneSample>& samples, const std::filesystem::path& path) {
  write_file_atomic(path, encode_dataset(samples));
}

std::vector<SceneSample> read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace latent_steer
