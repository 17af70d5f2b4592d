// Reference nested-loop kernels against the im2col + GEMM OpenMP kernels on
// the desk encoder geometry. The state range picks the layer; for the OpenMP
// variants a second range sets the thread count.

#include <omp.h>

#include <benchmark/benchmark.h>

#include <vector>

#include "latent_steer/kernels.hpp"
#include "latent_steer/rng.hpp"

namespace {

using namespace latent_steer;
using kernels::ConvShape;

constexpr int kBatch = 16;

ConvShape desk_layer(int index) {
  static constexpr int channels[] = {3, 24, 36, 48, 64};
  static constexpr int kernel[] = {5, 5, 3, 3};
  int h = 48, w = 64;
  ConvShape s;
  for (int i = 0; i <= index; ++i) {
    s.large_c = channels[i];
    s.large_h = h;
    s.large_w = w;
    s.small_c = channels[i + 1];
    s.kernel = kernel[i];
    s.stride = 2;
    s.pad = kernel[i] / 2;
    s.small_h = kernels::conv_out_extent(h, s.kernel, 2, s.pad);
    s.small_w = kernels::conv_out_extent(w, s.kernel, 2, s.pad);
    h = s.small_h;
    w = s.small_w;
  }
  s.batch = kBatch;
  return s;
}

struct Buffers {
  std::vector<float> large, small, weight, bias, d_large, d_small, d_weight, d_bias, scratch;

  explicit Buffers(const ConvShape& s)
      : large(s.large_size()), small(s.small_size()), weight(s.weight_size()), bias(s.small_c),
        d_large(s.large_size()), d_small(s.small_size()), d_weight(s.weight_size()), d_bias(s.small_c),
        scratch(s.scratch_size()) {
    Rng rng(7);
    for (auto* v : {&large, &small, &weight, &bias, &d_small, &d_large}) {
      for (auto& x : *v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
  }
};

void set_counters(benchmark::State& state, const ConvShape& s) {
  const double macs = static_cast<double>(s.weight_size()) * s.col_cols();
  state.counters["MAC/s"] = benchmark::Counter(macs * state.iterations(), benchmark::Counter::kIsRate);
}

void ConvForwardReference(benchmark::State& state) {
  const auto s = desk_layer(static_cast<int>(state.range(0)));
  Buffers b(s);
  for (auto _ : state) {
    kernels::reference::conv2d_forward<float>(s, b.large, b.weight, b.bias, b.small);
    benchmark::DoNotOptimize(b.small.data());
  }
  set_counters(state, s);
}

void ConvForwardOmp(benchmark::State& state) {
  const auto s = desk_layer(static_cast<int>(state.range(0)));
  omp_set_num_threads(static_cast<int>(state.range(1)));
  Buffers b(s);
  for (auto _ : state) {
    kernels::conv2d_forward<float>(s, b.large, b.weight, b.bias, b.small, b.scratch);
    benchmark::DoNotOptimize(b.small.data());
  }
  set_counters(state, s);
}

void ConvBackwardReference(benchmark::State& state) {
  const auto s = desk_layer(static_cast<int>(state.range(0)));
  Buffers b(s);
  for (auto _ : state) {
    kernels::reference::conv2d_backward<float>(s, b.large, b.weight, b.d_small, b.d_large, b.d_weight, b.d_bias);
    benchmark::DoNotOptimize(b.d_weight.data());
  }
  set_counters(state, s);
}

void ConvBackwardOmp(benchmark::State& state) {
  const auto s = desk_layer(static_cast<int>(state.range(0)));
  omp_set_num_threads(static_cast<int>(state.range(1)));
  Buffers b(s);
  for (auto _ : state) {
    kernels::conv2d_backward<float>(s, b.large, b.weight, b.d_small, b.d_large, b.d_weight, b.d_bias, b.scratch);
    benchmark::DoNotOptimize(b.d_weight.data());
  }
  set_counters(state, s);
}

void TconvForwardReference(benchmark::State& state) {
  const auto s = desk_layer(static_cast<int>(state.range(0)));
  Buffers b(s);
  std::vector<float> bias(s.large_c);
  for (auto _ : state) {
    kernels::reference::tconv2d_forward<float>(s, b.small, b.weight, bias, b.large);
    benchmark::DoNotOptimize(b.large.data());
  }
  set_counters(state, s);
}

void TconvForwardOmp(benchmark::State& state) {
  const auto s = desk_layer(static_cast<int>(state.range(0)));
  omp_set_num_threads(static_cast<int>(state.range(1)));
  Buffers b(s);
  std::vector<float> bias(s.large_c);
  for (auto _ : state) {
    kernels::tconv2d_forward<float>(s, b.small, b.weight, bias, b.large, b.scratch);
    benchmark::DoNotOptimize(b.large.data());
  }
  set_counters(state, s);
}

void omp_args(benchmark::internal::Benchmark* b) {
  const int max_threads = omp_get_num_procs();
  for (int layer = 0; layer < 4; ++layer) {
    for (int t = 1; t <= max_threads; t *= 2) b->Args({layer, t});
  }
  b->ArgNames({"layer", "threads"})->UseRealTime()->Unit(benchmark::kMicrosecond);
}

void ref_args(benchmark::internal::Benchmark* b) {
  b->DenseRange(0, 3)->ArgNames({"layer"})->Unit(benchmark::kMicrosecond);
}

BENCHMARK(ConvForwardReference)->Apply(ref_args);
BENCHMARK(ConvForwardOmp)->Apply(omp_args);
BENCHMARK(ConvBackwardReference)->Apply(ref_args);
BENCHMARK(ConvBackwardOmp)->Apply(omp_args);
BENCHMARK(TconvForwardReference)->Apply(ref_args);
BENCHMARK(TconvForwardOmp)->Apply(omp_args);

}  // namespace

BENCHMARK_MAIN();
