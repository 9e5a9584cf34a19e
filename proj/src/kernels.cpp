#include "depthprune/kernels.hpp"

#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace depthprune::kernels {

namespace {

inline void matmul_row(const double* a, const double* b, double* c, std::size_t k,
                       std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p];
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline void grad_a_row(const double* g, const double* b, double* ga, std::size_t k,
                       std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[j] * brow[j];
        ga[p] += acc;
    }
}

// One row p of a^T g: sum over i of a[i][p] * g[i][:].
inline void grad_b_row(const double* a, const double* g, double* gb_row, double* scratch,
                       std::size_t p, std::size_t r, std::size_t k, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) scratch[j] = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        const double av = a[i * k + p];
        const double* grow = g + i * n;
        for (std::size_t j = 0; j < n; ++j) scratch[j] += av * grow[j];
    }
    for (std::size_t j = 0; j < n; ++j) gb_row[j] += scratch[j];
}

inline void layer_norm_row(const double* x, double* xhat, double* inv_std, std::size_t d,
                           double eps) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double c = x[j] - mean;
        var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    *inv_std = is;
    for (std::size_t j = 0; j < d; ++j) xhat[j] = (x[j] - mean) * is;
}

bool worth_parallel(std::size_t work) {
    return openmp_enabled() && max_threads() > 1 && work >= kParallelWorkThreshold;
}

}  // namespace

void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t r, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < r; ++i) matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void matmul_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::size_t r, std::size_t k, std::size_t n) {
    const auto rows = static_cast<long long>(r);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < rows; ++i) {
        const auto row = static_cast<std::size_t>(i);
        matmul_row(a.data() + row * k, b.data(), c.data() + row * n, k, n);
    }
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t r, std::size_t k, std::size_t n) {
    if (worth_parallel(r * k * n)) {
        matmul_parallel(a, b, c, r, k, n);
    } else {
        matmul_serial(a, b, c, r, k, n);
    }
}

void matmul_grad_a_serial(std::span<const double> g, std::span<const double> b,
                          std::span<double> ga, std::size_t r, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < r; ++i) grad_a_row(g.data() + i * n, b.data(), ga.data() + i * k, k, n);
}

void matmul_grad_a_parallel(std::span<const double> g, std::span<const double> b,
                            std::span<double> ga, std::size_t r, std::size_t k, std::size_t n) {
    const auto rows = static_cast<long long>(r);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < rows; ++i) {
        const auto row = static_cast<std::size_t>(i);
        grad_a_row(g.data() + row * n, b.data(), ga.data() + row * k, k, n);
    }
}

void matmul_grad_a(std::span<const double> g, std::span<const double> b, std::span<double> ga,
                   std::size_t r, std::size_t k, std::size_t n) {
    if (worth_parallel(r * k * n)) {
        matmul_grad_a_parallel(g, b, ga, r, k, n);
    } else {
        matmul_grad_a_serial(g, b, ga, r, k, n);
    }
}

void matmul_grad_b_serial(std::span<const double> a, std::span<const double> g,
                          std::span<double> gb, std::size_t r, std::size_t k, std::size_t n) {
    std::vector<double> scratch(n);
    for (std::size_t p = 0; p < k; ++p) {
        grad_b_row(a.data(), g.data(), gb.data() + p * n, scratch.data(), p, r, k, n);
    }
}

void matmul_grad_b_parallel(std::span<const double> a, std::span<const double> g,
                            std::span<double> gb, std::size_t r, std::size_t k, std::size_t n) {
    const auto rows = static_cast<long long>(k);
#pragma omp parallel
    {
        std::vector<double> scratch(n);
#pragma omp for schedule(static)
        for (long long p = 0; p < rows; ++p) {
            const auto row = static_cast<std::size_t>(p);
            grad_b_row(a.data(), g.data(), gb.data() + row * n, scratch.data(), row, r, k, n);
        }
    }
}

void matmul_grad_b(std::span<const double> a, std::span<const double> g, std::span<double> gb,
                   std::size_t r, std::size_t k, std::size_t n) {
    if (worth_parallel(r * k * n)) {
        matmul_grad_b_parallel(a, g, gb, r, k, n);
    } else {
        matmul_grad_b_serial(a, g, gb, r, k, n);
    }
}

void layer_norm_rows_serial(std::span<const double> x, std::span<double> xhat,
                            std::span<double> inv_std, std::size_t rows, std::size_t d,
                            double eps) {
    for (std::size_t i = 0; i < rows; ++i) {
        layer_norm_row(x.data() + i * d, xhat.data() + i * d, inv_std.data() + i, d, eps);
    }
}

void layer_norm_rows_parallel(std::span<const double> x, std::span<double> xhat,
                              std::span<double> inv_std, std::size_t rows, std::size_t d,
                              double eps) {
    const auto n = static_cast<long long>(rows);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) {
        const auto row = static_cast<std::size_t>(i);
        layer_norm_row(x.data() + row * d, xhat.data() + row * d, inv_std.data() + row, d, eps);
    }
}

void layer_norm_rows(std::span<const double> x, std::span<double> xhat,
                     std::span<double> inv_std, std::size_t rows, std::size_t d, double eps) {
    if (worth_parallel(rows * d * 8)) {
        layer_norm_rows_parallel(x, xhat, inv_std, rows, d, eps);
    } else {
        layer_norm_rows_serial(x, xhat, inv_std, rows, d, eps);
    }
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  bool allow_parallel) {
    if (!allow_parallel || !openmp_enabled() || max_threads() == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1)
    for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

bool openmp_enabled() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace depthprune::kernels
