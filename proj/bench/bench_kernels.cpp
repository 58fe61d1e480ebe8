#include <benchmark/benchmark.h>

#include <vector>

#include "fedvc/kernels.hpp"
#include "fedvc/rng.hpp"

using namespace fedvc;

namespace {

std::vector<float> random_matrix(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> m((size_t)rows * cols);
  for (auto& x : m) x = float(rng.gaussian());
  return m;
}

void bm_matmul_serial(benchmark::State& state) {
  int n = (int)state.range(0);
  auto a = random_matrix(n, n, 1);
  auto b = random_matrix(n, n, 2);
  std::vector<float> out((size_t)n * n);
  for (auto _ : state) {
    kern::matmul_serial(a.data(), b.data(), out.data(), n, n, n);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * (int64_t)n * n * n);
}

void bm_matmul_parallel(benchmark::State& state) {
  int n = (int)state.range(0);
  auto a = random_matrix(n, n, 1);
  auto b = random_matrix(n, n, 2);
  std::vector<float> out((size_t)n * n);
  for (auto _ : state) {
    kern::matmul_parallel(a.data(), b.data(), out.data(), n, n, n);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * (int64_t)n * n * n);
}

void bm_sqdist_serial(benchmark::State& state) {
  int n = (int)state.range(0);
  int m = 64, d = 64;
  auto z = random_matrix(n, d, 3);
  auto c = random_matrix(m, d, 4);
  std::vector<float> out((size_t)n * m);
  for (auto _ : state) {
    kern::pairwise_sqdist_serial(z.data(), c.data(), out.data(), n, m, d);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * (int64_t)n * m * d);
}

void bm_sqdist_parallel(benchmark::State& state) {
  int n = (int)state.range(0);
  int m = 64, d = 64;
  auto z = random_matrix(n, d, 3);
  auto c = random_matrix(m, d, 4);
  std::vector<float> out((size_t)n * m);
  for (auto _ : state) {
    kern::pairwise_sqdist_parallel(z.data(), c.data(), out.data(), n, m, d);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * (int64_t)n * m * d);
}

}  // namespace

BENCHMARK(bm_matmul_serial)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_parallel)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_sqdist_serial)->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(bm_sqdist_parallel)->Arg(256)->Arg(1024)->Arg(4096);

BENCHMARK_MAIN();
