#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <vector>

#include "latent_steer/kernels.hpp"
#include "latent_steer/rng.hpp"

using namespace latent_steer;
using namespace latent_steer::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

ConvShape make_shape(int lc, int lh, int lw, int sc, int k, int stride, int batch) {
  ConvShape s;
  s.large_c = lc;
  s.large_h = lh;
  s.large_w = lw;
  s.small_c = sc;
  s.kernel = k;
  s.stride = stride;
  s.pad = (k - 1) / 2;
  s.small_h = conv_out_extent(lh, k, stride, s.pad);
  s.small_w = conv_out_extent(lw, k, stride, s.pad);
  s.batch = batch;
  return s;
}

std::vector<ConvShape> shapes() {
  std::vector<ConvShape> out;
  for (int batch : {1, 3, 7}) {
    out.push_back(make_shape(3, 11, 13, 4, 5, 2, batch));
    out.push_back(make_shape(2, 8, 9, 5, 3, 1, batch));
    out.push_back(make_shape(5, 6, 6, 3, 3, 2, batch));
    out.push_back(make_shape(1, 5, 7, 2, 1, 2, batch));
  }
  return out;
}

template <typename T>
void check_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(tol).scale(1.0));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("conv of a ones kernel sums each neighbourhood") {
  auto s = make_shape(1, 3, 3, 1, 3, 1, 1);
  std::vector<double> in{1, 2, 3, 4, 5, 6, 7, 8, 9}, w(9, 1.0), b{0.5}, out(9), scratch(s.scratch_size());
  conv2d_forward<double>(s, in, w, b, out, scratch);
  const std::vector<double> expected{12.5, 21.5, 16.5, 27.5, 45.5, 33.5, 24.5, 39.5, 28.5};
  check_close(out, expected, 1e-15);
}

TEST_CASE("gemm variants against naive triple loops") {
  Rng rng(1);
  const int dims[][3] = {{1, 1, 1}, {5, 7, 3}, {17, 300, 9}, {64, 75, 150}, {3, 513, 2}};
  for (const auto& d : dims) {
    const int m = d[0], n = d[1], k = d[2];
    const auto a = random_vec<double>(static_cast<std::size_t>(m) * k, rng);
    const auto b = random_vec<double>(static_cast<std::size_t>(k) * n, rng);
    auto c = random_vec<double>(static_cast<std::size_t>(m) * n, rng);
    auto expected = c;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        for (int p = 0; p < k; ++p) expected[i * n + j] += a[i * k + p] * b[p * n + j];
    gemm_nn(m, n, k, a.data(), b.data(), c.data());
    check_close(c, expected, 1e-13);

    // C[m x k] += A[m x n] B[k x n]^T
    const auto a2 = random_vec<double>(static_cast<std::size_t>(m) * n, rng);
    const auto b2 = random_vec<double>(static_cast<std::size_t>(k) * n, rng);
    std::vector<double> c2(static_cast<std::size_t>(m) * k, 0.25), e2 = c2;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j)
        for (int p = 0; p < n; ++p) e2[i * k + j] += a2[i * n + p] * b2[j * n + p];
    gemm_nt(m, n, k, a2.data(), b2.data(), c2.data());
    check_close(c2, e2, 1e-13);

    // C[k x n] += A[m x k]^T B[m x n]
    const auto a3 = random_vec<double>(static_cast<std::size_t>(m) * k, rng);
    const auto b3 = random_vec<double>(static_cast<std::size_t>(m) * n, rng);
    std::vector<double> c3(static_cast<std::size_t>(k) * n, -0.5), e3 = c3;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < n; ++j)
        for (int p = 0; p < m; ++p) e3[i * n + j] += a3[p * k + i] * b3[p * n + j];
    gemm_tn(m, n, k, a3.data(), b3.data(), c3.data());
    check_close(c3, e3, 1e-13);
  }
}

TEST_CASE("col2im is the adjoint of im2col") {
  Rng rng(2);
  for (const auto& s : shapes()) {
    const auto x = random_vec<double>(s.large_size(), rng);
    const auto c = random_vec<double>(s.scratch_size(), rng);
    std::vector<double> cols(s.scratch_size()), img(s.large_size(), 0.0);
    im2col<double>(s, x, cols);
    col2im<double>(s, c, img);
    CHECK(dot(cols, c) == doctest::Approx(dot(x, img)).epsilon(1e-12));
  }
}

TEST_CASE("transposed conv is the adjoint of conv") {
  Rng rng(3);
  for (const auto& s : shapes()) {
    const auto w = random_vec<double>(s.weight_size(), rng);
    const auto x = random_vec<double>(s.large_size(), rng);
    const auto y = random_vec<double>(s.small_size(), rng);
    std::vector<double> zb_small(s.small_c, 0.0), zb_large(s.large_c, 0.0);
    std::vector<double> cx(s.small_size()), ty(s.large_size()), scratch(s.scratch_size());
    conv2d_forward<double>(s, x, w, zb_small, cx, scratch);
    tconv2d_forward<double>(s, y, w, zb_large, ty, scratch);
    CHECK(dot(cx, y) == doctest::Approx(dot(x, ty)).epsilon(1e-12));
  }
}

TEST_CASE("parallel conv kernels match the serial reference") {
  Rng rng(4);
  for (const auto& s : shapes()) {
    const auto in = random_vec<double>(s.large_size(), rng);
    const auto w = random_vec<double>(s.weight_size(), rng);
    const auto b = random_vec<double>(s.small_c, rng);
    const auto d_out = random_vec<double>(s.small_size(), rng);
    std::vector<double> scratch(s.scratch_size());

    std::vector<double> out(s.small_size()), ref_out(s.small_size());
    conv2d_forward<double>(s, in, w, b, out, scratch);
    reference::conv2d_forward<double>(s, in, w, b, ref_out);
    check_close(out, ref_out, 1e-12);

    std::vector<double> di(s.large_size(), 0.0), dw(s.weight_size(), 0.0), db(s.small_c, 0.0);
    auto rdi = di, rdw = dw, rdb = db;
    conv2d_backward<double>(s, in, w, d_out, di, dw, db, scratch);
    reference::conv2d_backward<double>(s, in, w, d_out, rdi, rdw, rdb);
    check_close(di, rdi, 1e-12);
    check_close(dw, rdw, 1e-12);
    check_close(db, rdb, 1e-12);

    // Transposed conv: input is the small side.
    const auto tin = random_vec<double>(s.small_size(), rng);
    const auto tb = random_vec<double>(s.large_c, rng);
    const auto td_out = random_vec<double>(s.large_size(), rng);
    std::vector<double> tout(s.large_size()), ref_tout(s.large_size());
    tconv2d_forward<double>(s, tin, w, tb, tout, scratch);
    reference::tconv2d_forward<double>(s, tin, w, tb, ref_tout);
    check_close(tout, ref_tout, 1e-12);

    std::vector<double> tdi(s.small_size(), 0.0), tdw(s.weight_size(), 0.0), tdb(s.large_c, 0.0);
    auto rtdi = tdi, rtdw = tdw, rtdb = tdb;
    tconv2d_backward<double>(s, tin, w, td_out, tdi, tdw, tdb, scratch);
    reference::tconv2d_backward<double>(s, tin, w, td_out, rtdi, rtdw, rtdb);
    check_close(tdi, rtdi, 1e-12);
    check_close(tdw, rtdw, 1e-12);
    check_close(tdb, rtdb, 1e-12);
  }
}

TEST_CASE("float kernels track the double reference") {
  Rng rng(5);
  const auto s = make_shape(3, 11, 13, 4, 5, 2, 3);
  const auto in = random_vec<double>(s.large_size(), rng);
  const auto w = random_vec<double>(s.weight_size(), rng);
  const auto b = random_vec<double>(s.small_c, rng);
  std::vector<double> ref_out(s.small_size());
  reference::conv2d_forward<double>(s, in, w, b, ref_out);
  std::vector<float> fin(in.begin(), in.end()), fw(w.begin(), w.end()), fb(b.begin(), b.end());
  std::vector<float> out(s.small_size()), scratch(s.scratch_size());
  conv2d_forward<float>(s, fin, fw, fb, out, scratch);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - ref_out[i]) < 1e-5);
}

TEST_CASE("kernel results do not depend on the thread count") {
  Rng rng(6);
  const auto s = make_shape(4, 24, 31, 6, 5, 2, 5);
  const auto in = random_vec<float>(s.large_size(), rng);
  const auto w = random_vec<float>(s.weight_size(), rng);
  const auto b = random_vec<float>(s.small_c, rng);
  const auto d_out = random_vec<float>(s.small_size(), rng);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> scratch(s.scratch_size()), out(s.small_size()), di(s.large_size(), 0.f),
        dw(s.weight_size(), 0.f), db(s.small_c, 0.f);
    conv2d_forward<float>(s, in, w, b, out, scratch);
    conv2d_backward<float>(s, in, w, d_out, di, dw, db, scratch);
    out.insert(out.end(), di.begin(), di.end());
    out.insert(out.end(), dw.begin(), dw.end());
    out.insert(out.end(), db.begin(), db.end());
    return out;
  };
  const auto one = run(1);
  const auto four = run(4);
  omp_set_num_threads(2);
  CHECK(one == four);
}

TEST_CASE("dense layer forward and backward") {
  // y = b + W x with W = [[1,2],[3,4],[5,6]].
  const std::vector<double> w{1, 2, 3, 4, 5, 6}, b{0.5, -0.5, 0}, x{1, -1};
  std::vector<double> y(3);
  dense_forward<double>(3, 2, x, w, b, y);
  CHECK(y == std::vector<double>{-0.5, -1.5, -1.0});
  const std::vector<double> dy{1, 0, 2};
  std::vector<double> dx(2, 0.0), dw(6, 0.0), db(3, 0.0);
  dense_backward<double>(3, 2, x, w, dy, dx, dw, db);
  CHECK(dx == std::vector<double>{11, 14});
  CHECK(dw == std::vector<double>{1, -1, 0, 0, 2, -2});
  CHECK(db == std::vector<double>{1, 0, 2});
}
