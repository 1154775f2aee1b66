// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels.
#include <benchmark/benchmark.h>

#include "cme/kernels.hpp"
#include "cme/posthoc.hpp"
#include "cme/rng.hpp"

using namespace cme;

namespace {

Tensor2D random(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor2D t(r, c);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

template <auto Gemm>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor2D a = random(n, n, 1), b = random(n, n, 2);
  Tensor2D c(n, n);
  for (auto _ : state) {
    Gemm(false, false, a, b, c, false);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <auto Softmax>
void BM_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const Tensor2D x = random(rows, 64, 3);
  Tensor2D out(rows, 64);
  for (auto _ : state) {
    Softmax(x, {}, out);
    benchmark::DoNotOptimize(out.data().data());
  }
}

template <auto Grid>
void BM_temperature_grid(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor2D z = random(n, 3, 4);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 3);
  for (auto _ : state) benchmark::DoNotOptimize(Grid(z, y, 10));
}

}  // namespace

BENCHMARK(BM_gemm<kernels::gemm_serial>)->Name("gemm/serial")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<kernels::gemm_openmp>)->Name("gemm/openmp")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_softmax<kernels::softmax_rows_serial>)->Name("softmax/serial")->Arg(256)->Arg(4096);
BENCHMARK(BM_softmax<kernels::softmax_rows_openmp>)->Name("softmax/openmp")->Arg(256)->Arg(4096);
BENCHMARK(BM_temperature_grid<grid_ece_serial>)->Name("temperature_grid/serial")->Arg(500)->Arg(2000);
BENCHMARK(BM_temperature_grid<grid_ece_openmp>)->Name("temperature_grid/openmp")->Arg(500)->Arg(2000);

BENCHMARK_MAIN();
