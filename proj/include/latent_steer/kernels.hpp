#pragma once

#include <cstddef>
#include <span>

namespace latent_steer::kernels {

// Geometry of one strided convolution seen from both sides. The "large" side
// is the conv input (and transposed-conv output); the "small" side is the conv
// output (and transposed-conv input). Weights of both layer kinds are laid out
// as [small_c][large_c][k][k], i.e. a small_c x (large_c*k*k) matrix.
//
// Activations of a batch are stored channel-major: [c][batch][h][w], so one
// GEMM covers every frame of the batch.
struct ConvShape {
  int large_c = 0, large_h = 0, large_w = 0;
  int small_c = 0, small_h = 0, small_w = 0;
  int kernel = 1, stride = 1, pad = 0;
  int batch = 1;

  std::size_t large_plane() const { return static_cast<std::size_t>(batch) * large_h * large_w; }
  std::size_t large_size() const { return static_cast<std::size_t>(large_c) * large_plane(); }
  std::size_t small_size() const { return static_cast<std::size_t>(small_c) * col_cols(); }
  std::size_t col_rows() const { return static_cast<std::size_t>(large_c) * kernel * kernel; }
  std::size_t col_cols() const { return static_cast<std::size_t>(batch) * small_h * small_w; }
  std::size_t weight_size() const { return static_cast<std::size_t>(small_c) * col_rows(); }
  std::size_t scratch_size() const { return col_rows() * col_cols(); }
};

// Output extent of a strided conv with symmetric padding.
constexpr int conv_out_extent(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

// Patches of the large image into columns; taps outside the image read 0.
template <typename T>
void im2col(const ConvShape& s, std::span<const T> image, std::span<T> cols);

// Adjoint of im2col: scatters and accumulates columns into the image.
template <typename T>
void col2im(const ConvShape& s, std::span<const T> cols, std::span<T> image);

// Row-major products accumulating into C.
//   gemm_nn: C[m x n] += A[m x k] * B[k x n]
//   gemm_nt: C[m x k] += A[m x n] * B[k x n]^T
//   gemm_tn: C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c);
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c);
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c);

// Layer kernels. Each output element is owned by exactly one thread with a
// fixed summation order, so results do not depend on the thread count.
// `scratch` must hold s.scratch_size() elements. Gradients accumulate (+=).

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out, std::span<T> scratch);

// d_in may be empty to skip the input gradient.
template <typename T>
void conv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> d_out,
                     std::span<T> d_in, std::span<T> d_weight, std::span<T> d_bias, std::span<T> scratch);

template <typename T>
void tconv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                     std::span<T> out, std::span<T> scratch);

template <typename T>
void tconv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> d_out,
                      std::span<T> d_in, std::span<T> d_weight, std::span<T> d_bias, std::span<T> scratch);

// y[m] = b[m] + W[m x n] x[n]
template <typename T>
void dense_forward(int m, int n, std::span<const T> x, std::span<const T> weight, std::span<const T> bias,
                   std::span<T> y);

// d_x may be empty.
template <typename T>
void dense_backward(int m, int n, std::span<const T> x, std::span<const T> weight, std::span<const T> d_y,
                    std::span<T> d_x, std::span<T> d_weight, std::span<T> d_bias);

// Direct nested-loop versions of the layer kernels: single-threaded, no
// scratch, written straight from the definitions. Used as test oracles and as
// the benchmark baseline.
namespace reference {

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out);

template <typename T>
void conv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> d_out,
                     std::span<T> d_in, std::span<T> d_weight, std::span<T> d_bias);

template <typename T>
void tconv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                     std::span<T> out);

template <typename T>
void tconv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> d_out,
                      std::span<T> d_in, std::span<T> d_weight, std::span<T> d_bias);

}  // namespace reference
}  // namespace latent_steer::kernels
