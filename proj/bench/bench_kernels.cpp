#include <benchmark/benchmark.h>

#include <vector>

#include "depthprune/kernels.hpp"
#include "depthprune/rng.hpp"

using namespace depthprune;

namespace {

std::vector<double> random_values(std::size_t n) {
    Rng rng(80);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <auto Kernel>
void bm_matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n), b = random_values(n * n);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        Kernel(a, b, c, n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <auto Kernel>
void bm_matmul_grad_b(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n), g = random_values(n * n);
    std::vector<double> gb(n * n);
    for (auto _ : state) {
        Kernel(a, g, gb, n, n, n);
        benchmark::DoNotOptimize(gb.data());
    }
}

template <auto Kernel>
void bm_layer_norm(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const std::size_t d = 64;
    const auto x = random_values(rows * d);
    std::vector<double> xhat(rows * d), inv(rows);
    for (auto _ : state) {
        Kernel(x, xhat, inv, rows, d, 1e-5);
        benchmark::DoNotOptimize(xhat.data());
    }
}

}  // namespace

BENCHMARK(bm_matmul<kernels::matmul_serial>)->Name("matmul/serial")->RangeMultiplier(2)->Range(16, 256);
BENCHMARK(bm_matmul<kernels::matmul_parallel>)->Name("matmul/parallel")->RangeMultiplier(2)->Range(16, 256);
BENCHMARK(bm_matmul_grad_b<kernels::matmul_grad_b_serial>)->Name("matmul_grad_b/serial")->Range(32, 256);
BENCHMARK(bm_matmul_grad_b<kernels::matmul_grad_b_parallel>)->Name("matmul_grad_b/parallel")->Range(32, 256);
BENCHMARK(bm_layer_norm<kernels::layer_norm_rows_serial>)->Name("layer_norm/serial")->Range(64, 8192);
BENCHMARK(bm_layer_norm<kernels::layer_norm_rows_parallel>)->Name("layer_norm/parallel")->Range(64, 8192);

BENCHMARK_MAIN();
