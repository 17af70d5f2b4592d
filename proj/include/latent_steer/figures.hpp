#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "latent_steer/alp.hpp"
#include "latent_steer/image.hpp"

namespace latent_steer {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit RGB raster.
struct Canvas {
  int w = 0;
  int h = 0;
  std::vector<std::uint8_t> rgb;

  Canvas(int w_, int h_, Rgb fill = {255, 255, 255});
  void set(int x, int y, Rgb c);
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);  // inclusive-exclusive, clipped
  void hline(int x0, int x1, int y, Rgb c);
  void vline(int x, int y0, int y1, Rgb c);
};

// PNG bytes; text entries become tEXt chunks in key order.
std::vector<std::uint8_t> encode_png(const Canvas& canvas, const std::map<std::string, std::string>& text = {});
void write_png(const std::filesystem::path& path, const Canvas& canvas,
               const std::map<std::string, std::string>& text = {});
// Decoded RGB rows, for comparing figures without their metadata.
Canvas read_png(const std::filesystem::path& path);
std::string png_pixel_hash(const std::filesystem::path& path);

// Nearest-neighbour upscaled renderings.
Canvas render_image(const ImageF& image, int scale);
Canvas render_image(const ImageD& image, int scale);
// Signed values in [-1,1]: blue (negative) through white to red (positive).
Canvas render_heatmap(const ImageD& delta, int scale);
// Image with masked pixels tinted red and region borders outlined.
Canvas render_overlay(const ImageF& image, const BoolMask& mask, int scale);

// Per-dimension mean +/- std bars for the -2 sigma and +2 sigma errors.
Canvas render_perturbation_bars(const std::vector<DimensionAggregate>& dims);
// Box plot of one distribution.
Canvas render_box(const FiveNumber& summary);
// Per-dimension box plots of top-decile (red) and bottom-decile (blue) impact.
Canvas render_impact_boxes(const std::vector<DimensionAggregate>& dims);

}  // namespace latent_steer
