#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace latent_steer {

// Interleaved row-major h x w x c image.
template <typename T>
struct Image {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<T> data;

  Image() = default;
  Image(int h_, int w_, int c_, T fill = T{})
      : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(int y, int x, int ch = 0) const {
    return (static_cast<std::size_t>(y) * w + x) * c + ch;
  }
  T& at(int y, int x, int ch = 0) { return data[index(y, x, ch)]; }
  const T& at(int y, int x, int ch = 0) const { return data[index(y, x, ch)]; }
  bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }

  bool operator==(const Image&) const = default;
};

using ImageF = Image<float>;
using ImageD = Image<double>;
using ClassMap = Image<std::uint8_t>;
using BoolMask = Image<std::uint8_t>;

}  // namespace latent_steer
