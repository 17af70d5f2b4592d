#include "latent_steer/figures.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "latent_steer/error.hpp"
#include "latent_steer/io_util.hpp"

namespace latent_steer {

Canvas::Canvas(int w_, int h_, Rgb fill) : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3) {
  for (std::size_t i = 0; i < rgb.size(); i += 3) std::copy(fill.begin(), fill.end(), rgb.begin() + i);
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= w || y >= h) return;
  std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<std::size_t>(y) * w + x) * 3);
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::max(0, y0); y < std::min(h, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(w, x1); ++x) set(x, y, c);
}

void Canvas::hline(int x0, int x1, int y, Rgb c) { fill_rect(std::min(x0, x1), y, std::max(x0, x1) + 1, y + 1, c); }
void Canvas::vline(int x, int y0, int y1, Rgb c) { fill_rect(x, std::min(y0, y1), x + 1, std::max(y0, y1) + 1, c); }

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_nothing(png_structp) {}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

template <typename T>
Canvas render_any(const Image<T>& image, int scale) {
  Canvas c(image.w * scale, image.h * scale);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      Rgb px;
      for (int ch = 0; ch < 3; ++ch) px[ch] = to_byte(image.at(y, x, std::min(ch, image.c - 1)));
      c.fill_rect(x * scale, y * scale, (x + 1) * scale, (y + 1) * scale, px);
    }
  }
  return c;
}

constexpr Rgb kAxis{60, 60, 60};
constexpr Rgb kGrid{225, 225, 225};
constexpr Rgb kMinusColor{70, 110, 200};
constexpr Rgb kPlusColor{210, 90, 60};
constexpr int kMargin = 20;

// Maps [lo, hi] to pixel rows of a plot area [top, bottom].
struct YScale {
  double lo, hi;
  int top, bottom;
  int operator()(double v) const {
    if (hi <= lo) return bottom;
    return bottom - static_cast<int>(std::lround((v - lo) / (hi - lo) * (bottom - top)));
  }
};

void draw_axes(Canvas& c, const YScale& ys) {
  for (int k = 1; k <= 4; ++k) {
    const int y = ys.bottom - (ys.bottom - ys.top) * k / 4;
    c.hline(kMargin, c.w - kMargin, y, kGrid);
  }
  c.vline(kMargin, ys.top, ys.bottom, kAxis);
  c.hline(kMargin, c.w - kMargin, ys.bottom, kAxis);
}

void draw_box(Canvas& c, int x0, int x1, const FiveNumber& f, const YScale& ys, Rgb color) {
  const int mid = (x0 + x1) / 2;
  c.vline(mid, ys(f.min), ys(f.q1), kAxis);
  c.vline(mid, ys(f.q3), ys(f.max), kAxis);
  c.hline(x0 + (x1 - x0) / 4, x1 - (x1 - x0) / 4, ys(f.min), kAxis);
  c.hline(x0 + (x1 - x0) / 4, x1 - (x1 - x0) / 4, ys(f.max), kAxis);
  c.fill_rect(x0, ys(f.q3), x1 + 1, ys(f.q1) + 1, color);
  c.hline(x0, x1, ys(f.q1), kAxis);
  c.hline(x0, x1, ys(f.q3), kAxis);
  c.vline(x0, ys(f.q3), ys(f.q1), kAxis);
  c.vline(x1, ys(f.q3), ys(f.q1), kAxis);
  c.hline(x0, x1, ys(f.median), {0, 0, 0});
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Canvas& canvas, const std::map<std::string, std::string>& text) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("cannot create PNG writer");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, flush_nothing);
  png_set_IHDR(png, info, canvas.w, canvas.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_text> chunks;
  for (const auto& [k, v] : text) {
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = const_cast<char*>(k.c_str());
    t.text = const_cast<char*>(v.c_str());
    t.text_length = v.size();
    chunks.push_back(t);
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  for (int y = 0; y < canvas.h; ++y) {
    png_write_row(png, const_cast<png_bytep>(canvas.rgb.data() + static_cast<std::size_t>(y) * canvas.w * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const Canvas& canvas,
               const std::map<std::string, std::string>& text) {
  write_file_atomic(path, encode_png(canvas, text));
}

Canvas read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  const auto bytes = read_file(path);
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError("not a PNG file: " + path.string(), 0);
  }
  image.format = PNG_FORMAT_RGB;
  Canvas c(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, c.rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError("corrupt PNG file: " + path.string(), 0);
  }
  return c;
}

std::string png_pixel_hash(const std::filesystem::path& path) {
  const auto c = read_png(path);
  std::vector<std::uint8_t> payload(8);
  for (int b = 0; b < 4; ++b) {
    payload[b] = static_cast<std::uint8_t>(c.w >> (8 * b));
    payload[4 + b] = static_cast<std::uint8_t>(c.h >> (8 * b));
  }
  payload.insert(payload.end(), c.rgb.begin(), c.rgb.end());
  return sha256_hex(payload);
}

Canvas render_image(const ImageF& image, int scale) { return render_any(image, scale); }
Canvas render_image(const ImageD& image, int scale) { return render_any(image, scale); }

Canvas render_heatmap(const ImageD& delta, int scale) {
  Canvas c(delta.w * scale, delta.h * scale);
  for (int y = 0; y < delta.h; ++y) {
    for (int x = 0; x < delta.w; ++x) {
      const double v = std::clamp(delta.at(y, x), -1.0, 1.0);
      const double a = std::abs(v);
      const Rgb px = v >= 0 ? Rgb{255, to_byte(1.0 - a), to_byte(1.0 - a)} : Rgb{to_byte(1.0 - a), to_byte(1.0 - a), 255};
      c.fill_rect(x * scale, y * scale, (x + 1) * scale, (y + 1) * scale, px);
    }
  }
  return c;
}

Canvas render_overlay(const ImageF& image, const BoolMask& mask, int scale) {
  Canvas c = render_any(image, scale);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      if (!mask.at(y, x)) continue;
      for (int yy = y * scale; yy < (y + 1) * scale; ++yy) {
        for (int xx = x * scale; xx < (x + 1) * scale; ++xx) {
          auto* p = c.rgb.data() + (static_cast<std::size_t>(yy) * c.w + xx) * 3;
          p[0] = static_cast<std::uint8_t>((p[0] + 255) / 2);
          p[1] = static_cast<std::uint8_t>(p[1] / 2);
          p[2] = static_cast<std::uint8_t>(p[2] / 2);
        }
      }
      auto outside = [&](int yy, int xx) { return yy < 0 || xx < 0 || yy >= mask.h || xx >= mask.w || !mask.at(yy, xx); };
      if (outside(y - 1, x)) c.hline(x * scale, (x + 1) * scale - 1, y * scale, {255, 255, 0});
      if (outside(y + 1, x)) c.hline(x * scale, (x + 1) * scale - 1, (y + 1) * scale - 1, {255, 255, 0});
      if (outside(y, x - 1)) c.vline(x * scale, y * scale, (y + 1) * scale - 1, {255, 255, 0});
      if (outside(y, x + 1)) c.vline((x + 1) * scale - 1, y * scale, (y + 1) * scale - 1, {255, 255, 0});
    }
  }
  return c;
}

Canvas render_perturbation_bars(const std::vector<DimensionAggregate>& dims) {
  const int slot = 24;
  Canvas c(2 * kMargin + slot * static_cast<int>(std::max<std::size_t>(dims.size(), 1)), 240);
  double hi = 0.0;
  for (const auto& d : dims) hi = std::max({hi, d.minus_error.mean + d.minus_error.std, d.plus_error.mean + d.plus_error.std});
  const YScale ys{0.0, hi > 0 ? hi : 1.0, kMargin, c.h - kMargin};
  draw_axes(c, ys);
  for (std::size_t j = 0; j < dims.size(); ++j) {
    const int x0 = kMargin + slot * static_cast<int>(j) + 3;
    const auto bar = [&](int x, const MeanStd& m, Rgb color) {
      c.fill_rect(x, ys(m.mean), x + 8, ys.bottom, color);
      c.vline(x + 4, ys(std::max(0.0, m.mean - m.std)), ys(m.mean + m.std), kAxis);
      c.hline(x + 2, x + 6, ys(m.mean + m.std), kAxis);
    };
    bar(x0, dims[j].minus_error, kMinusColor);
    bar(x0 + 9, dims[j].plus_error, kPlusColor);
  }
  return c;
}

Canvas render_box(const FiveNumber& summary) {
  Canvas c(120, 240);
  const double lo = std::min(0.0, summary.min);
  const YScale ys{lo, summary.max > lo ? summary.max : lo + 1.0, kMargin, c.h - kMargin};
  draw_axes(c, ys);
  draw_box(c, 45, 85, summary, ys, {190, 190, 230});
  return c;
}

Canvas render_impact_boxes(const std::vector<DimensionAggregate>& dims) {
  const int slot = 30;
  Canvas c(2 * kMargin + slot * static_cast<int>(std::max<std::size_t>(dims.size(), 1)), 240);
  double hi = 0.0;
  for (const auto& d : dims) hi = std::max({hi, d.top_impact.max, d.bottom_impact.max});
  const YScale ys{0.0, hi > 0 ? hi : 1.0, kMargin, c.h - kMargin};
  draw_axes(c, ys);
  for (std::size_t j = 0; j < dims.size(); ++j) {
    const int x0 = kMargin + slot * static_cast<int>(j) + 3;
    draw_box(c, x0, x0 + 10, dims[j].top_impact, ys, {235, 160, 140});
    draw_box(c, x0 + 13, x0 + 23, dims[j].bottom_impact, ys, {150, 175, 230});
  }
  return c;
}

}  // namespace latent_steer
