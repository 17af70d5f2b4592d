#include "latent_steer/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <utility>
#include <vector>

namespace latent_steer::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 15;

}  // namespace

namespace {

// Output columns ox whose input column ox * stride - pad + kx lies inside [0, w).
inline std::pair<int, int> valid_range(int out, int stride, int pad, int kx, int w) {
  int lo = pad - kx > 0 ? (pad - kx + stride - 1) / stride : 0;
  int hi = (w - 1 + pad - kx) >= 0 ? (w - 1 + pad - kx) / stride + 1 : 0;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
  return {lo, hi};
}

}  // namespace

template <typename T>
void im2col(const ConvShape& s, std::span<const T> image, std::span<T> cols) {
  const int k = s.kernel;
  const int rows = static_cast<int>(s.col_rows());
  const std::size_t ncols = s.col_cols();
  const std::size_t in_plane = static_cast<std::size_t>(s.large_h) * s.large_w;
  const std::size_t out_plane = static_cast<std::size_t>(s.small_h) * s.small_w;
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * static_cast<long>(ncols) > kParallelWork)
  for (int r = 0; r < rows; ++r) {
    const int c = r / (k * k);
    const int ky = (r / k) % k;
    const int kx = r % k;
    const auto [lo, hi] = valid_range(s.small_w, s.stride, s.pad, kx, s.large_w);
    const int off = kx - s.pad;
    for (int b = 0; b < s.batch; ++b) {
      const T* plane = image.data() + (static_cast<std::size_t>(c) * s.batch + b) * in_plane;
      T* dst = cols.data() + static_cast<std::size_t>(r) * ncols + b * out_plane;
      for (int oy = 0; oy < s.small_h; ++oy) {
        const int iy = oy * s.stride - s.pad + ky;
        T* row = dst + static_cast<std::size_t>(oy) * s.small_w;
        if (iy < 0 || iy >= s.large_h) {
          std::fill(row, row + s.small_w, T{0});
          continue;
        }
        const T* src = plane + static_cast<std::size_t>(iy) * s.large_w + off;
        std::fill(row, row + lo, T{0});
        if (s.stride == 1) {
          std::copy(src + lo, src + hi, row + lo);
        } else if (s.stride == 2) {
          for (int ox = lo; ox < hi; ++ox) row[ox] = src[2 * ox];
        } else {
          for (int ox = lo; ox < hi; ++ox) row[ox] = src[ox * s.stride];
        }
        std::fill(row + hi, row + s.small_w, T{0});
      }
    }
  }
}

template <typename T>
void col2im(const ConvShape& s, std::span<const T> cols, std::span<T> image) {
  const int k = s.kernel;
  const std::size_t ncols = s.col_cols();
  const std::size_t in_plane = static_cast<std::size_t>(s.large_h) * s.large_w;
  const std::size_t out_plane = static_cast<std::size_t>(s.small_h) * s.small_w;
#pragma omp parallel for schedule(static) if (static_cast<long>(s.col_rows() * ncols) > kParallelWork)
  for (int c = 0; c < s.large_c; ++c) {
    for (int b = 0; b < s.batch; ++b) {
      T* plane = image.data() + (static_cast<std::size_t>(c) * s.batch + b) * in_plane;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const auto [lo, hi] = valid_range(s.small_w, s.stride, s.pad, kx, s.large_w);
          const int off = kx - s.pad;
          const T* src = cols.data() + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * ncols + b * out_plane;
          for (int oy = 0; oy < s.small_h; ++oy) {
            const int iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= s.large_h) continue;
            T* dst = plane + static_cast<std::size_t>(iy) * s.large_w + off;
            const T* row = src + static_cast<std::size_t>(oy) * s.small_w;
            if (s.stride == 2) {
              for (int ox = lo; ox < hi; ++ox) dst[2 * ox] += row[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) dst[ox * s.stride] += row[ox];
            }
          }
        }
      }
    }
  }
}

namespace {

// dst[c][r] = src[r][c] for a rows x cols matrix.
template <typename T>
void transpose(int rows, int cols, const T* src, T* dst) {
  constexpr int kBlock = 32;
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols > kParallelWork)
  for (int c0 = 0; c0 < cols; c0 += kBlock) {
    const int c1 = std::min(cols, c0 + kBlock);
    for (int r0 = 0; r0 < rows; r0 += kBlock) {
      const int r1 = std::min(rows, r0 + kBlock);
      for (int c = c0; c < c1; ++c)
        for (int r = r0; r < r1; ++r) dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
    }
  }
}

template <typename T>
struct Vec64;
template <>
struct Vec64<float> {
  typedef float type __attribute__((vector_size(64)));
};
template <>
struct Vec64<double> {
  typedef double type __attribute__((vector_size(64)));
};

template <typename T>
std::vector<T>& transpose_buffer(std::size_t n) {
  thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

}  // namespace

// Column panels of B are packed and swept by an MR x NR register tile. Every
// output element accumulates over p in increasing order whatever the thread count.
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c) {
  constexpr int kNr = 256 / static_cast<int>(sizeof(T));
  constexpr int kMr = 4;
  const int tiles = (n + kNr - 1) / kNr;
#pragma omp parallel if (static_cast<long>(m) * n * k > kParallelWork)
  {
    std::vector<T> panel(static_cast<std::size_t>(k) * kNr);
#pragma omp for schedule(static)
    for (int t = 0; t < tiles; ++t) {
      const int j0 = t * kNr;
      const int nj = std::min(kNr, n - j0);
      for (int p = 0; p < k; ++p) {
        T* dst = panel.data() + static_cast<std::size_t>(p) * kNr;
        std::copy_n(b + static_cast<std::size_t>(p) * n + j0, nj, dst);
        std::fill(dst + nj, dst + kNr, T{0});
      }
      for (int i0 = 0; i0 < m; i0 += kMr) {
        const int mi = std::min(kMr, m - i0);
        alignas(64) T acc[kMr][kNr] = {};
        const T* ar[kMr];
        for (int r = 0; r < kMr; ++r) {
          ar[r] = a + static_cast<std::size_t>(i0 + std::min(r, mi - 1)) * k;
          if (r < mi) std::copy_n(c + static_cast<std::size_t>(i0 + r) * n + j0, nj, acc[r]);
        }
        for (int p = 0; p < k; ++p) {
          const T* bp = panel.data() + static_cast<std::size_t>(p) * kNr;
          for (int r = 0; r < kMr; ++r) {
            const T av = ar[r][p];
#pragma omp simd
            for (int j = 0; j < kNr; ++j) acc[r][j] += av * bp[j];
          }
        }
        for (int r = 0; r < mi; ++r) std::copy_n(acc[r], nj, c + static_cast<std::size_t>(i0 + r) * n + j0);
      }
    }
  }
}

// Rows of A against rows of B in 4 x 4 blocks of vector accumulators; lanes are
// reduced in a fixed order at the end so results do not depend on threading.
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c) {
  constexpr int kLanes = 64 / static_cast<int>(sizeof(T));
  using Vec = typename Vec64<T>::type;
  constexpr int kBlock = 4;
  const int nv = n / kLanes * kLanes;
  const int pblocks = (k + kBlock - 1) / kBlock;
  auto load = [](const T* p) {
    Vec v;
    std::memcpy(&v, p, sizeof(Vec));
    return v;
  };
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > kParallelWork)
  for (int pb = 0; pb < pblocks; ++pb) {
    const int p0 = pb * kBlock;
    const int np = std::min(kBlock, k - p0);
    const T* br[kBlock];
    for (int q = 0; q < kBlock; ++q) br[q] = b + static_cast<std::size_t>(p0 + std::min(q, np - 1)) * n;
    for (int i0 = 0; i0 < m; i0 += kBlock) {
      const int mi = std::min(kBlock, m - i0);
      const T* ar[kBlock];
      for (int r = 0; r < kBlock; ++r) ar[r] = a + static_cast<std::size_t>(i0 + std::min(r, mi - 1)) * n;
      Vec acc[kBlock][kBlock] = {};
      for (int j = 0; j < nv; j += kLanes) {
        Vec bv[kBlock];
        for (int q = 0; q < kBlock; ++q) bv[q] = load(br[q] + j);
        for (int r = 0; r < kBlock; ++r) {
          const Vec av = load(ar[r] + j);
          for (int q = 0; q < kBlock; ++q) acc[r][q] += av * bv[q];
        }
      }
      for (int r = 0; r < mi; ++r) {
        for (int q = 0; q < np; ++q) {
          T sum = 0;
          for (int l = 0; l < kLanes; ++l) sum += acc[r][q][l];
          for (int j = nv; j < n; ++j) sum += ar[r][j] * br[q][j];
          c[static_cast<std::size_t>(i0 + r) * k + p0 + q] += sum;
        }
      }
    }
  }
}

template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c) {
  auto& at = transpose_buffer<T>(static_cast<std::size_t>(m) * k);
  transpose(m, k, a, at.data());
  gemm_nn(k, n, m, at.data(), b, c);
}

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out, std::span<T> scratch) {
  const std::size_t plane = s.col_cols();
  for (int oc = 0; oc < s.small_c; ++oc) std::fill_n(out.begin() + oc * plane, plane, bias[oc]);
  im2col<T>(s, in, scratch);
  gemm_nn(s.small_c, static_cast<int>(plane), static_cast<int>(s.col_rows()), weight.data(), scratch.data(),
          out.data());
}

template <typename T>
void conv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> d_out,
                     std::span<T> d_in, std::span<T> d_weight, std::span<T> d_bias, std::span<T> scratch) {
  const std::size_t plane = s.col_cols();
  const int rows = static_cast<int>(s.col_rows());
  for (int oc = 0; oc < s.small_c; ++oc) {
    T acc = 0;
    for (std::size_t p = 0; p < plane; ++p) acc += d_out[oc * plane + p];
    d_bias[oc] += acc;
  }
  im2col<T>(s, in, scratch);
  gemm_nt(s.small_c, static_cast<int>(plane), rows, d_out.data(), scratch.data(), d_weight.data());
  if (!d_in.empty()) {
    std::fill(scratch.begin(), scratch.end(), T{0});
    gemm_tn(s.small_c, static_cast<int>(plane), rows, weight.data(), d_out.data(), scratch.data());
    col2im<T>(s, scratch, d_in);
  }
}

template <typename T>
void tconv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                     std::span<T> out, std::span<T> scratch) {
  const std::size_t plane = s.large_plane();
  for (int c = 0; c < s.large_c; ++c) std::fill_n(out.begin() + c * plane, plane, bias[c]);
  std::fill(scratch.begin(), scratch.end(), T{0});
  gemm_tn(s.small_c, static_cast<int>(s.col_cols()), static_cast<int>(s.col_rows()), weight.data(), in.data(),
          scratch.data());
  col2im<T>(s, scratch, out);
}

template <typename T>
void tconv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> d_out,
                      std::span<T> d_in, std::span<T> d_weight, std::span<T> d_bias, std::span<T> scratch) {
  const std::size_t plane = s.large_plane();
  for (int c = 0; c < s.large_c; ++c) {
    T acc = 0;
    for (std::size_t p = 0; p < plane; ++p) acc += d_out[c * plane + p];
    d_bias[c] += acc;
  }
  im2col<T>(s, d_out, scratch);
  const int ncols = static_cast<int>(s.col_cols());
  const int rows = static_cast<int>(s.col_rows());
  gemm_nt(s.small_c, ncols, rows, in.data(), scratch.data(), d_weight.data());
  if (!d_in.empty()) gemm_nn(s.small_c, ncols, rows, weight.data(), scratch.data(), d_in.data());
}

template <typename T>
void dense_forward(int m, int n, std::span<const T> x, std::span<const T> weight, std::span<const T> bias,
                   std::span<T> y) {
  for (int i = 0; i < m; ++i) {
    const T* wi = weight.data() + static_cast<std::size_t>(i) * n;
    T acc = 0;
#pragma omp simd reduction(+ : acc)
    for (int j = 0; j < n; ++j) acc += wi[j] * x[j];
    y[i] = bias[i] + acc;
  }
}

template <typename T>
void dense_backward(int m, int n, std::span<const T> x, std::span<const T> weight, std::span<const T> d_y,
                    std::span<T> d_x, std::span<T> d_weight, std::span<T> d_bias) {
  for (int i = 0; i < m; ++i) {
    const T g = d_y[i];
    d_bias[i] += g;
    if (g == T{0}) continue;
    T* dwi = d_weight.data() + static_cast<std::size_t>(i) * n;
#pragma omp simd
    for (int j = 0; j < n; ++j) dwi[j] += g * x[j];
    if (!d_x.empty()) {
      const T* wi = weight.data() + static_cast<std::size_t>(i) * n;
#pragma omp simd
      for (int j = 0; j < n; ++j) d_x[j] += g * wi[j];
    }
  }
}

namespace reference {

namespace {

template <typename T>
struct Taps {
  const ConvShape& s;
  std::size_t large(int c, int b, int y, int x) const {
    return ((static_cast<std::size_t>(c) * s.batch + b) * s.large_h + y) * s.large_w + x;
  }
  std::size_t small(int c, int b, int y, int x) const {
    return ((static_cast<std::size_t>(c) * s.batch + b) * s.small_h + y) * s.small_w + x;
  }
  std::size_t w(int sc, int lc, int ky, int kx) const {
    return ((static_cast<std::size_t>(sc) * s.large_c + lc) * s.kernel + ky) * s.kernel + kx;
  }
};

// Calls f(sc, b, oy, ox, lc, iy, ix, ky, kx) for every in-bounds tap.
template <typename F>
void for_each_tap(const ConvShape& s, F&& f) {
  for (int sc = 0; sc < s.small_c; ++sc)
    for (int b = 0; b < s.batch; ++b)
      for (int oy = 0; oy < s.small_h; ++oy)
        for (int ox = 0; ox < s.small_w; ++ox)
          for (int lc = 0; lc < s.large_c; ++lc)
            for (int ky = 0; ky < s.kernel; ++ky)
              for (int kx = 0; kx < s.kernel; ++kx) {
                const int iy = oy * s.stride - s.pad + ky;
                const int ix = ox * s.stride - s.pad + kx;
                if (iy < 0 || iy >= s.large_h || ix < 0 || ix >= s.large_w) continue;
                f(sc, b, oy, ox, lc, iy, ix, ky, kx);
              }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out) {
  Taps<T> t{s};
  for (int sc = 0; sc < s.small_c; ++sc)
    for (int b = 0; b < s.batch; ++b)
      for (int oy = 0; oy < s.small_h; ++oy)
        for (int ox = 0; ox < s.small_w; ++ox) out[t.small(sc, b, oy, ox)] = bias[sc];
  for_each_tap(s, [&](int sc, int b, int oy, int ox, int lc, int iy, int ix, int ky, int kx) {
    out[t.small(sc, b, oy, ox)] += weight[t.w(sc, lc, ky, kx)] * in[t.large(lc, b, iy, ix)];
  });
}

template <typename T>
void conv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> d_out,
                     std::span<T> d_in, std::span<T> d_weight, std::span<T> d_bias) {
  Taps<T> t{s};
  for (int sc = 0; sc < s.small_c; ++sc)
    for (int b = 0; b < s.batch; ++b)
      for (int oy = 0; oy < s.small_h; ++oy)
        for (int ox = 0; ox < s.small_w; ++ox) d_bias[sc] += d_out[t.small(sc, b, oy, ox)];
  for_each_tap(s, [&](int sc, int b, int oy, int ox, int lc, int iy, int ix, int ky, int kx) {
    const T g = d_out[t.small(sc, b, oy, ox)];
    d_weight[t.w(sc, lc, ky, kx)] += g * in[t.large(lc, b, iy, ix)];
    if (!d_in.empty()) d_in[t.large(lc, b, iy, ix)] += g * weight[t.w(sc, lc, ky, kx)];
  });
}

template <typename T>
void tconv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                     std::span<T> out) {
  Taps<T> t{s};
  for (int lc = 0; lc < s.large_c; ++lc)
    for (int b = 0; b < s.batch; ++b)
      for (int y = 0; y < s.large_h; ++y)
        for (int x = 0; x < s.large_w; ++x) out[t.large(lc, b, y, x)] = bias[lc];
  for_each_tap(s, [&](int sc, int b, int oy, int ox, int lc, int iy, int ix, int ky, int kx) {
    out[t.large(lc, b, iy, ix)] += weight[t.w(sc, lc, ky, kx)] * in[t.small(sc, b, oy, ox)];
  });
}

template <typename T>
void tconv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> d_out,
                      std::span<T> d_in, std::span<T> d_weight, std::span<T> d_bias) {
  Taps<T> t{s};
  for (int lc = 0; lc < s.large_c; ++lc)
    for (int b = 0; b < s.batch; ++b)
      for (int y = 0; y < s.large_h; ++y)
        for (int x = 0; x < s.large_w; ++x) d_bias[lc] += d_out[t.large(lc, b, y, x)];
  for_each_tap(s, [&](int sc, int b, int oy, int ox, int lc, int iy, int ix, int ky, int kx) {
    const T g = d_out[t.large(lc, b, iy, ix)];
    d_weight[t.w(sc, lc, ky, kx)] += g * in[t.small(sc, b, oy, ox)];
    if (!d_in.empty()) d_in[t.small(sc, b, oy, ox)] += g * weight[t.w(sc, lc, ky, kx)];
  });
}

}  // namespace reference

#define LATENT_STEER_INSTANTIATE(T)                                                                              \
  template void im2col<T>(const ConvShape&, std::span<const T>, std::span<T>);                                   \
  template void col2im<T>(const ConvShape&, std::span<const T>, std::span<T>);                                   \
  template void gemm_nn<T>(int, int, int, const T*, const T*, T*);                                               \
  template void gemm_nt<T>(int, int, int, const T*, const T*, T*);                                               \
  template void gemm_tn<T>(int, int, int, const T*, const T*, T*);                                               \
  template void conv2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>, std::span<const T>, \
                                  std::span<T>, std::span<T>);                                                   \
  template void conv2d_backward<T>(const ConvShape&, std::span<const T>, std::span<const T>, std::span<const T>, \
                                   std::span<T>, std::span<T>, std::span<T>, std::span<T>);                      \
  template void tconv2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>, std::span<const T>, \
                                   std::span<T>, std::span<T>);                                                  \
  template void tconv2d_backward<T>(const ConvShape&, std::span<const T>, std::span<const T>,                    \
                                    std::span<const T>, std::span<T>, std::span<T>, std::span<T>, std::span<T>); \
  template void dense_forward<T>(int, int, std::span<const T>, std::span<const T>, std::span<const T>,           \
                                 std::span<T>);                                                                  \
  template void dense_backward<T>(int, int, std::span<const T>, std::span<const T>, std::span<const T>,          \
                                  std::span<T>, std::span<T>, std::span<T>);                                     \
  template void reference::conv2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>,           \
                                             std::span<const T>, std::span<T>);                                  \
  template void reference::conv2d_backward<T>(const ConvShape&, std::span<const T>, std::span<const T>,          \
                                              std::span<const T>, std::span<T>, std::span<T>, std::span<T>);     \
  template void reference::tconv2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>,          \
                                              std::span<const T>, std::span<T>);                                 \
  template void reference::tconv2d_backward<T>(const ConvShape&, std::span<const T>, std::span<const T>,         \
                                               std::span<const T>, std::span<T>, std::span<T>, std::span<T>);

LATENT_STEER_INSTANTIATE(float)
LATENT_STEER_INSTANTIATE(double)

#undef LATENT_STEER_INSTANTIATE

}  // namespace latent_steer::kernels
