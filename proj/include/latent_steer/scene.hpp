#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "latent_steer/image.hpp"

namespace latent_steer {

enum class SceneClass : std::uint8_t { kSky = 0, kRoad = 1, kLaneMarking = 2, kVehicle = 3, kRoadside = 4 };
inline constexpr int kNumSceneClasses = 5;
const char* scene_class_name(int id);

struct SceneSample {
  ImageF image;       // h x w x 3, values in [0,1]
  float steering = 0;  // normalized, in [-1,1]
  ClassMap seg_mask;  // h x w x 1 class ids

  bool operator==(const SceneSample&) const = default;
};

struct SceneConfig {
  int h = 48;
  int w = 64;
  int frames = 100;
  std::uint64_t seed = 0;
  // Steering label = clip(curvature / curvature_scale, -1, 1).
  double curvature_scale = 0.4;
  // Exponential smoothing factor of the curvature process, in (0,1).
  double curvature_smoothness = 0.9;
  // Multiplier on the Gaussian curvature increments; 0 gives a straight road.
  double increment_scale = 1.0;
  double vehicle_rate = 0.3;
  // Amplitude of the per-pixel texture noise.
  double texture_noise = 0.02;

  void validate() const;
};

// Deterministic in config (including seed).
std::vector<SceneSample> generate_sequence(const SceneConfig& config);

// Dataset file: little-endian, magic "VNCP", u32 version=1, h, w, c=3, frames,
// then per frame h*w*3 float32 image, float32 steering, h*w u8 mask.
void write_dataset(const std::vector<SceneSample>& samples, const std::filesystem::path& path);
std::vector<SceneSample> read_dataset(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_dataset(const std::vector<SceneSample>& samples);
std::vector<SceneSample> decode_dataset(const std::vector<std::uint8_t>& bytes);

}  // namespace latent_steer
