#include "latent_steer/vae.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latent_steer/error.hpp"

namespace latent_steer {

void VaeConfig::validate() const {
  if (h < 1 || w < 1) throw ConfigError("image size must be positive");
  if (latent_dim < 1) throw ConfigError("latent dimension must be >= 1");
  for (int l = 0; l < 4; ++l) {
    if (channels[l] < 1) throw ConfigError("channel counts must be >= 1");
    if (kernels[l] < 1 || kernels[l] % 2 == 0) throw ConfigError("kernel sizes must be odd and >= 1");
  }
}

namespace {

template <typename T>
T elu(T x) {
  return x > T{0} ? x : std::expm1(x);
}

// ELU'(x) expressed through y = ELU(x).
template <typename T>
T elu_grad_from_output(T y) {
  return y > T{0} ? T{1} : y + T{1};
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <typename T>
void elu_inplace(std::vector<T>& v) {
  for (auto& x : v) x = elu(x);
}

template <typename T>
std::span<const T> slice(std::span<const T> p, std::size_t offset, std::size_t n) {
  return p.subspan(offset, n);
}

template <typename T>
std::span<T> slice(std::span<T> p, std::size_t offset, std::size_t n) {
  return p.subspan(offset, n);
}

}  // namespace

VaeNet::VaeNet(const VaeConfig& config, ParamLayout& layout) : config_(config) {
  config_.validate();
  int c = 3, h = config_.h, w = config_.w;
  for (int l = 0; l < kLayers; ++l) {
    const int k = config_.kernels[l];
    auto& s = shapes_[l];
    s.large_c = c;
    s.large_h = h;
    s.large_w = w;
    s.small_c = config_.channels[l];
    s.kernel = k;
    s.stride = 2;
    s.pad = (k - 1) / 2;
    s.small_h = kernels::conv_out_extent(h, k, 2, s.pad);
    s.small_w = kernels::conv_out_extent(w, k, 2, s.pad);
    if (s.small_h < 1 || s.small_w < 1) throw ConfigError("image too small for the encoder stack");
    c = s.small_c;
    h = s.small_h;
    w = s.small_w;
  }
  flat_ = static_cast<std::size_t>(c) * h * w;
  const int m = config_.latent_dim;
  const int flat = static_cast<int>(flat_);

  for (int l = 0; l < kLayers; ++l) {
    const auto& s = shapes_[l];
    const std::string p = "enc.conv" + std::to_string(l);
    enc_conv_[l].weight = layout.add(p + ".weight", {s.small_c, s.large_c, s.kernel, s.kernel});
    enc_conv_[l].bias = layout.add(p + ".bias", {s.small_c});
  }
  enc_mu_.weight = layout.add("enc.mu.weight", {m, flat});
  enc_mu_.bias = layout.add("enc.mu.bias", {m});
  enc_log_var_.weight = layout.add("enc.log_var.weight", {m, flat});
  enc_log_var_.bias = layout.add("enc.log_var.bias", {m});
  dec_fc_.weight = layout.add("dec.fc.weight", {flat, m});
  dec_fc_.bias = layout.add("dec.fc.bias", {flat});
  for (int l = kLayers - 1; l >= 0; --l) {
    const auto& s = shapes_[l];
    const std::string p = "dec.tconv" + std::to_string(l);
    dec_tconv_[l].weight = layout.add(p + ".weight", {s.small_c, s.large_c, s.kernel, s.kernel});
    dec_tconv_[l].bias = layout.add(p + ".bias", {s.large_c});
  }
}

namespace {

// [c][batch][plane] <-> [batch][c*plane]
template <typename T>
void gather_rows(std::span<const T> cbp, int c, int batch, std::size_t plane, std::span<T> rows) {
  for (int b = 0; b < batch; ++b)
    for (int ch = 0; ch < c; ++ch)
      std::copy_n(cbp.begin() + (static_cast<std::size_t>(ch) * batch + b) * plane, plane,
                  rows.begin() + (static_cast<std::size_t>(b) * c + ch) * plane);
}

template <typename T>
void scatter_rows(std::span<const T> rows, int c, int batch, std::size_t plane, std::span<T> cbp) {
  for (int b = 0; b < batch; ++b)
    for (int ch = 0; ch < c; ++ch)
      std::copy_n(rows.begin() + (static_cast<std::size_t>(b) * c + ch) * plane, plane,
                  cbp.begin() + (static_cast<std::size_t>(ch) * batch + b) * plane);
}

}  // namespace

template <typename T>
void VaeNet::encode(std::span<const T> params, std::span<const T> x, int batch, EncoderTape<T>& tape) const {
  if (batch < 1 || x.size() != image_size() * batch) {
    throw DimensionError("encoder expects " + std::to_string(image_size()) + " values per image, got " +
                         std::to_string(x.size()) + " for a batch of " + std::to_string(batch));
  }
  tape.batch = batch;
  tape.input.assign(x.begin(), x.end());
  std::size_t scratch = 0;
  for (const auto& s : shapes_) scratch = std::max(scratch, s.scratch_size() * batch);
  tape.scratch.resize(scratch);

  std::span<const T> in = tape.input;
  for (int l = 0; l < kLayers; ++l) {
    auto s = shapes_[l];
    s.batch = batch;
    auto& out = tape.act[l];
    out.resize(s.small_size());
    kernels::conv2d_forward<T>(s, in, slice(params, enc_conv_[l].weight, s.weight_size()),
                               slice(params, enc_conv_[l].bias, s.small_c), out, tape.scratch);
    elu_inplace(out);
    in = out;
  }
  const auto& top = shapes_[kLayers - 1];
  const std::size_t plane = static_cast<std::size_t>(top.small_h) * top.small_w;
  tape.flat.resize(flat_ * batch);
  gather_rows<T>(in, top.small_c, batch, plane, tape.flat);

  const int m = config_.latent_dim;
  const int flat = static_cast<int>(flat_);
  tape.mu.resize(static_cast<std::size_t>(m) * batch);
  tape.log_var.resize(static_cast<std::size_t>(m) * batch);
  for (int b = 0; b < batch; ++b) {
    const auto row = std::span<const T>(tape.flat).subspan(b * flat_, flat_);
    kernels::dense_forward<T>(m, flat, row, slice(params, enc_mu_.weight, flat_ * m), slice(params, enc_mu_.bias, m),
                              std::span<T>(tape.mu).subspan(b * m, m));
    kernels::dense_forward<T>(m, flat, row, slice(params, enc_log_var_.weight, flat_ * m),
                              slice(params, enc_log_var_.bias, m), std::span<T>(tape.log_var).subspan(b * m, m));
  }
}

template <typename T>
void VaeNet::encode_backward(std::span<const T> params, EncoderTape<T>& tape, std::span<const T> d_mu,
                             std::span<const T> d_log_var, std::span<T> grad) const {
  const int m = config_.latent_dim;
  const int flat = static_cast<int>(flat_);
  const int batch = tape.batch;
  std::vector<T> d_rows(flat_ * batch, T{0});
  for (int b = 0; b < batch; ++b) {
    const auto row = std::span<const T>(tape.flat).subspan(b * flat_, flat_);
    const auto d_row = std::span<T>(d_rows).subspan(b * flat_, flat_);
    kernels::dense_backward<T>(m, flat, row, slice(params, enc_mu_.weight, flat_ * m), d_mu.subspan(b * m, m), d_row,
                               slice(grad, enc_mu_.weight, flat_ * m), slice(grad, enc_mu_.bias, m));
    kernels::dense_backward<T>(m, flat, row, slice(params, enc_log_var_.weight, flat_ * m),
                               d_log_var.subspan(b * m, m), d_row, slice(grad, enc_log_var_.weight, flat_ * m),
                               slice(grad, enc_log_var_.bias, m));
  }
  const auto& top = shapes_[kLayers - 1];
  std::vector<T> d_act(flat_ * batch);
  scatter_rows<T>(d_rows, top.small_c, batch, static_cast<std::size_t>(top.small_h) * top.small_w, d_act);

  std::vector<T> d_in;
  for (int l = kLayers - 1; l >= 0; --l) {
    auto s = shapes_[l];
    s.batch = batch;
    const auto& out = tape.act[l];
    for (std::size_t i = 0; i < d_act.size(); ++i) d_act[i] *= elu_grad_from_output(out[i]);
    std::span<const T> in = l > 0 ? std::span<const T>(tape.act[l - 1]) : std::span<const T>(tape.input);
    if (l > 0) d_in.assign(s.large_size(), T{0});
    kernels::conv2d_backward<T>(s, in, slice(params, enc_conv_[l].weight, s.weight_size()), d_act,
                                l > 0 ? std::span<T>(d_in) : std::span<T>(),
                                slice(grad, enc_conv_[l].weight, s.weight_size()),
                                slice(grad, enc_conv_[l].bias, s.small_c), tape.scratch);
    if (l > 0) d_act.swap(d_in);
  }
}

template <typename T>
void VaeNet::decode(std::span<const T> params, std::span<const T> z, int batch, DecoderTape<T>& tape) const {
  const int m = config_.latent_dim;
  if (batch < 1 || z.size() != static_cast<std::size_t>(m) * batch) {
    throw DimensionError("decoder expects latents of length " + std::to_string(m) + ", got " +
                         std::to_string(z.size()) + " values for a batch of " + std::to_string(batch));
  }
  tape.batch = batch;
  tape.z.assign(z.begin(), z.end());
  std::size_t scratch = 0;
  for (const auto& s : shapes_) scratch = std::max(scratch, s.scratch_size() * batch);
  tape.scratch.resize(scratch);

  tape.fc.resize(flat_ * batch);
  for (int b = 0; b < batch; ++b) {
    kernels::dense_forward<T>(static_cast<int>(flat_), m, std::span<const T>(tape.z).subspan(b * m, m),
                              slice(params, dec_fc_.weight, flat_ * m), slice(params, dec_fc_.bias, flat_),
                              std::span<T>(tape.fc).subspan(b * flat_, flat_));
  }
  elu_inplace(tape.fc);
  const auto& top = shapes_[kLayers - 1];
  tape.grad_a.resize(flat_ * batch);
  scatter_rows<T>(tape.fc, top.small_c, batch, static_cast<std::size_t>(top.small_h) * top.small_w, tape.grad_a);

  std::span<const T> in = tape.grad_a;
  for (int i = 0; i < kLayers; ++i) {
    const int l = kLayers - 1 - i;
    auto s = shapes_[l];
    s.batch = batch;
    auto& out = tape.act[i];
    out.resize(s.large_size());
    kernels::tconv2d_forward<T>(s, in, slice(params, dec_tconv_[l].weight, s.weight_size()),
                                slice(params, dec_tconv_[l].bias, s.large_c), out, tape.scratch);
    if (l > 0) {
      elu_inplace(out);
    } else {
      for (auto& v : out) v = sigmoid(v);
    }
    in = out;
  }
}

template <typename T>
void VaeNet::decode_backward(std::span<const T> params, DecoderTape<T>& tape, std::span<const T> d_xhat,
                             std::span<T> d_z, std::span<T> grad) const {
  const int m = config_.latent_dim;
  const int batch = tape.batch;
  auto& d = tape.grad_a;
  auto& d_in = tape.grad_b;
  const auto& xhat = tape.output();
  d.resize(xhat.size());
  for (std::size_t i = 0; i < xhat.size(); ++i) d[i] = d_xhat[i] * xhat[i] * (T{1} - xhat[i]);

  for (int i = kLayers - 1; i >= 0; --i) {
    const int l = kLayers - 1 - i;
    auto s = shapes_[l];
    s.batch = batch;
    d_in.assign(s.small_size(), T{0});
    if (i > 0) {
      kernels::tconv2d_backward<T>(s, tape.act[i - 1], slice(params, dec_tconv_[l].weight, s.weight_size()), d, d_in,
                                   slice(grad, dec_tconv_[l].weight, s.weight_size()),
                                   slice(grad, dec_tconv_[l].bias, s.large_c), tape.scratch);
      const auto& in = tape.act[i - 1];
      for (std::size_t k = 0; k < d_in.size(); ++k) d_in[k] *= elu_grad_from_output(in[k]);
    } else {
      std::vector<T> fc_cb(flat_ * batch);
      scatter_rows<T>(tape.fc, s.small_c, batch, static_cast<std::size_t>(s.small_h) * s.small_w, fc_cb);
      kernels::tconv2d_backward<T>(s, fc_cb, slice(params, dec_tconv_[l].weight, s.weight_size()), d, d_in,
                                   slice(grad, dec_tconv_[l].weight, s.weight_size()),
                                   slice(grad, dec_tconv_[l].bias, s.large_c), tape.scratch);
      for (std::size_t k = 0; k < d_in.size(); ++k) d_in[k] *= elu_grad_from_output(fc_cb[k]);
    }
    d.swap(d_in);
  }
  const auto& top = shapes_[kLayers - 1];
  std::vector<T> d_rows(flat_ * batch);
  gather_rows<T>(d, top.small_c, batch, static_cast<std::size_t>(top.small_h) * top.small_w, d_rows);
  std::fill(d_z.begin(), d_z.end(), T{0});
  for (int b = 0; b < batch; ++b) {
    kernels::dense_backward<T>(static_cast<int>(flat_), m, std::span<const T>(tape.z).subspan(b * m, m),
                               slice(params, dec_fc_.weight, flat_ * m),
                               std::span<const T>(d_rows).subspan(b * flat_, flat_), d_z.subspan(b * m, m),
                               slice(grad, dec_fc_.weight, flat_ * m), slice(grad, dec_fc_.bias, flat_));
  }
}

#define LATENT_STEER_INSTANTIATE(T)                                                                                  \
  template void VaeNet::encode<T>(std::span<const T>, std::span<const T>, int, EncoderTape<T>&) const;                    \
  template void VaeNet::encode_backward<T>(std::span<const T>, EncoderTape<T>&, std::span<const T>,                  \
                                           std::span<const T>, std::span<T>) const;                                  \
  template void VaeNet::decode<T>(std::span<const T>, std::span<const T>, int, DecoderTape<T>&) const;                    \
  template void VaeNet::decode_backward<T>(std::span<const T>, DecoderTape<T>&, std::span<const T>, std::span<T>,    \
                                           std::span<T>) const;

LATENT_STEER_INSTANTIATE(float)
LATENT_STEER_INSTANTIATE(double)

#undef LATENT_STEER_INSTANTIATE

}  // namespace latent_steer
