#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "latent_steer/kernels.hpp"
#include "latent_steer/params.hpp"

namespace latent_steer {

struct VaeConfig {
  int h = 48;
  int w = 64;
  int latent_dim = 16;
  std::array<int, 4> channels{24, 36, 48, 64};
  std::array<int, 4> kernels{5, 5, 3, 3};

  void validate() const;
  bool operator==(const VaeConfig&) const = default;
};

// Encoder: four stride-2 conv blocks with ELU, flatten, affine heads for mu
// and log-variance. Decoder: affine + ELU, then four transposed convs that
// mirror the encoder geometry (ELU between, sigmoid at the end). Each
// transposed conv writes exactly the extent of the matching encoder input, so
// the reconstruction has the input shape for any h x w.
//
// Tensors inside the network are planar (c x h x w).
class VaeNet {
 public:
  static constexpr int kLayers = 4;

  VaeNet() = default;
  VaeNet(const VaeConfig& config, ParamLayout& layout);

  const VaeConfig& config() const { return config_; }
  int latent_dim() const { return config_.latent_dim; }
  std::size_t image_size() const { return static_cast<std::size_t>(3) * config_.h * config_.w; }
  std::size_t flat_size() const { return flat_; }
  const kernels::ConvShape& layer_shape(int l) const { return shapes_[l]; }

  // Batched tensors: images are [3][batch][h][w]; latents are [batch][M].
  template <typename T>
  struct EncoderTape {
    int batch = 0;
    std::vector<T> input;
    std::array<std::vector<T>, kLayers> act;
    std::vector<T> flat;  // [batch][flat_size]
    std::vector<T> mu, log_var;
    std::vector<T> scratch;
  };

  template <typename T>
  struct DecoderTape {
    int batch = 0;
    std::vector<T> z;
    std::vector<T> fc;  // [batch][flat_size], post-activation
    std::array<std::vector<T>, kLayers> act;  // act[kLayers-1] is the reconstruction
    std::vector<T> scratch;
    std::vector<T> grad_a, grad_b;

    const std::vector<T>& output() const { return act[kLayers - 1]; }
  };

  template <typename T>
  void encode(std::span<const T> params, std::span<const T> x, int batch, EncoderTape<T>& tape) const;

  // Accumulates parameter gradients into grad.
  template <typename T>
  void encode_backward(std::span<const T> params, EncoderTape<T>& tape, std::span<const T> d_mu,
                       std::span<const T> d_log_var, std::span<T> grad) const;

  template <typename T>
  void decode(std::span<const T> params, std::span<const T> z, int batch, DecoderTape<T>& tape) const;

  // d_z ([batch][M]) is overwritten; parameter gradients accumulate into grad.
  template <typename T>
  void decode_backward(std::span<const T> params, DecoderTape<T>& tape, std::span<const T> d_xhat, std::span<T> d_z,
                       std::span<T> grad) const;

 private:
  struct Offsets {
    std::size_t weight = 0, bias = 0;
  };

  VaeConfig config_;
  std::array<kernels::ConvShape, kLayers> shapes_{};
  std::size_t flat_ = 0;
  std::array<Offsets, kLayers> enc_conv_{};
  Offsets enc_mu_, enc_log_var_, dec_fc_;
  std::array<Offsets, kLayers> dec_tconv_{};
};

// Interleaved h x w x c image <-> slot b of a [c][batch][h][w] tensor.
template <typename T, typename U>
void pack_image(std::span<const U> hwc, int h, int w, int c, int batch, int b, std::span<T> packed) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        packed[(static_cast<std::size_t>(ch) * batch + b) * plane + static_cast<std::size_t>(y) * w + x] =
            static_cast<T>(hwc[(static_cast<std::size_t>(y) * w + x) * c + ch]);
}

template <typename T, typename U>
void unpack_image(std::span<const U> packed, int h, int w, int c, int batch, int b, std::span<T> hwc) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        hwc[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            static_cast<T>(packed[(static_cast<std::size_t>(ch) * batch + b) * plane + static_cast<std::size_t>(y) * w + x]);
}

}  // namespace latent_steer
