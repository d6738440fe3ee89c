// Serial reference vs OpenMP kernels on encoder-sized shapes.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "inject/kernels.hpp"
#include "inject/rng.hpp"

namespace k = inject::kernels;

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  inject::Rng rng(seed);
  std::vector<double> out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

template <auto Gemm>
void bm_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Gemm(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <auto Softmax>
void bm_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{128};
  const auto x = random_buffer(rows * cols, 3);
  std::vector<std::uint8_t> keep(rows * cols, 1);
  for (std::size_t i = 0; i < keep.size(); i += 7) keep[i] = 0;
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    Softmax(rows, cols, x.data(), keep.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * cols));
}

template <auto LayerNorm>
void bm_layer_norm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{256};
  const auto x = random_buffer(rows * cols, 4), gain = random_buffer(cols, 5), bias = random_buffer(cols, 6);
  std::vector<double> y(rows * cols), mean(rows), rstd(rows);
  for (auto _ : state) {
    LayerNorm(rows, cols, x.data(), gain.data(), bias.data(), 1e-12, y.data(), mean.data(), rstd.data());
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * cols));
}

}  // namespace

BENCHMARK(bm_gemm<k::serial::gemm_nn>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<k::parallel::gemm_nn>)->Name("gemm_nn/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<k::serial::gemm_nt>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<k::parallel::gemm_nt>)->Name("gemm_nt/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<k::serial::gemm_tn>)->Name("gemm_tn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<k::parallel::gemm_tn>)->Name("gemm_tn/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_softmax<k::serial::softmax_rows>)->Name("softmax/serial")->Range(64, 4096);
BENCHMARK(bm_softmax<k::parallel::softmax_rows>)->Name("softmax/parallel")->Range(64, 4096);
BENCHMARK(bm_layer_norm<k::serial::layer_norm_rows>)->Name("layer_norm/serial")->Range(64, 4096);
BENCHMARK(bm_layer_norm<k::parallel::layer_norm_rows>)->Name("layer_norm/parallel")->Range(64, 4096);

BENCHMARK_MAIN();
