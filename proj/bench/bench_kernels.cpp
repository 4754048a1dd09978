#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "delib/kernels.hpp"

namespace k = delib::kernels;

namespace {

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <auto Kernel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Kernel(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n * n * n));
}

template <auto Kernel>
void BM_softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_values(n * n, 3);
  std::vector<double> y(n * n);
  for (auto _ : state) {
    Kernel(x, y, n, n);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Kernel>
void BM_layer_norm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_values(n * n, 4);
  std::vector<double> xhat(n * n), inv(n);
  for (auto _ : state) {
    Kernel(x, xhat, inv, n, n, 1e-5);
    benchmark::DoNotOptimize(xhat.data());
  }
}

}  // namespace

BENCHMARK(BM_matmul<k::serial::matmul>)->Name("matmul/serial")->RangeMultiplier(2)->Range(32, 512);
BENCHMARK(BM_matmul<k::parallel::matmul>)->Name("matmul/parallel")->RangeMultiplier(2)->Range(32, 512)->UseRealTime();
BENCHMARK(BM_softmax<k::serial::softmax_rows>)->Name("softmax/serial")->Range(64, 1024);
BENCHMARK(BM_softmax<k::parallel::softmax_rows>)->Name("softmax/parallel")->Range(64, 1024)->UseRealTime();
BENCHMARK(BM_layer_norm<k::serial::layer_norm_rows>)->Name("layer_norm/serial")->Range(64, 1024);
BENCHMARK(BM_layer_norm<k::parallel::layer_norm_rows>)->Name("layer_norm/parallel")->Range(64, 1024)->UseRealTime();

BENCHMARK_MAIN();
