#pragma once

#include <cstddef>
#include <functional>
#include <span>

// Dense kernels behind the tensor ops. Every kernel has a serial reference
// and an OpenMP variant; both evaluate each output element with the same
// summation order, so their results are bit-identical. The dispatching entry
// points pick the parallel variant above a work threshold.
namespace depthprune::kernels {

/// c[r x n] = a[r x k] * b[k x n]  (overwrites c)
void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t r, std::size_t k, std::size_t n);
void matmul_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::size_t r, std::size_t k, std::size_t n);
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t r, std::size_t k, std::size_t n);

/// ga[r x k] += g[r x n] * b[k x n]^T
void matmul_grad_a_serial(std::span<const double> g, std::span<const double> b,
                          std::span<double> ga, std::size_t r, std::size_t k, std::size_t n);
void matmul_grad_a_parallel(std::span<const double> g, std::span<const double> b,
                            std::span<double> ga, std::size_t r, std::size_t k, std::size_t n);
void matmul_grad_a(std::span<const double> g, std::span<const double> b, std::span<double> ga,
                   std::size_t r, std::size_t k, std::size_t n);

/// gb[k x n] += a[r x k]^T * g[r x n]
void matmul_grad_b_serial(std::span<const double> a, std::span<const double> g,
                          std::span<double> gb, std::size_t r, std::size_t k, std::size_t n);
void matmul_grad_b_parallel(std::span<const double> a, std::span<const double> g,
                            std::span<double> gb, std::size_t r, std::size_t k, std::size_t n);
void matmul_grad_b(std::span<const double> a, std::span<const double> g, std::span<double> gb,
                   std::size_t r, std::size_t k, std::size_t n);

/// Row-wise layer norm forward. Writes normalized rows (before the affine
/// map) into xhat and per-row 1/sqrt(var + eps) into inv_std.
void layer_norm_rows_serial(std::span<const double> x, std::span<double> xhat,
                            std::span<double> inv_std, std::size_t rows, std::size_t d,
                            double eps);
void layer_norm_rows_parallel(std::span<const double> x, std::span<double> xhat,
                              std::span<double> inv_std, std::size_t rows, std::size_t d,
                              double eps);
void layer_norm_rows(std::span<const double> x, std::span<double> xhat,
                     std::span<double> inv_std, std::size_t rows, std::size_t d, double eps);

/// Runs body(i) for i in [0, n). Iterations must write disjoint state.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  bool allow_parallel = true);

/// Minimum r*k*n before the dispatchers go parallel.
inline constexpr std::size_t kParallelWorkThreshold = std::size_t{1} << 16;

bool openmp_enabled();
int max_threads();

}  // namespace depthprune::kernels
