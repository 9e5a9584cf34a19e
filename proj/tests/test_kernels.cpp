#include <doctest.h>

#include <atomic>
#include <vector>

#include "depthprune/kernels.hpp"
#include "depthprune/rng.hpp"

using namespace depthprune;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

TEST_CASE("matmul variants agree bit for bit") {
    Rng rng(11);
    for (auto [r, k, n] : {std::array<std::size_t, 3>{3, 4, 5}, {64, 64, 64}, {97, 33, 41}}) {
        const auto a = random_values(rng, r * k), b = random_values(rng, k * n);
        std::vector<double> c1(r * n), c2(r * n), c3(r * n);
        kernels::matmul_serial(a, b, c1, r, k, n);
        kernels::matmul_parallel(a, b, c2, r, k, n);
        kernels::matmul(a, b, c3, r, k, n);
        CHECK(c1 == c2);
        CHECK(c1 == c3);

        const auto g = random_values(rng, r * n);
        std::vector<double> ga1(r * k, 0.5), ga2(r * k, 0.5);
        kernels::matmul_grad_a_serial(g, b, ga1, r, k, n);
        kernels::matmul_grad_a_parallel(g, b, ga2, r, k, n);
        CHECK(ga1 == ga2);

        std::vector<double> gb1(k * n, -0.25), gb2(k * n, -0.25);
        kernels::matmul_grad_b_serial(a, g, gb1, r, k, n);
        kernels::matmul_grad_b_parallel(a, g, gb2, r, k, n);
        CHECK(gb1 == gb2);
    }
}

TEST_CASE("matmul serial matches the textbook triple loop") {
    Rng rng(12);
    const std::size_t r = 5, k = 7, n = 3;
    const auto a = random_values(rng, r * k), b = random_values(rng, k * n);
    std::vector<double> c(r * n);
    kernels::matmul_serial(a, b, c, r, k, n);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
            CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
        }
    }
}

TEST_CASE("layer norm variants agree bit for bit") {
    Rng rng(13);
    const std::size_t rows = 300, d = 17;
    const auto x = random_values(rng, rows * d);
    std::vector<double> h1(rows * d), h2(rows * d), s1(rows), s2(rows);
    kernels::layer_norm_rows_serial(x, h1, s1, rows, d, 1e-5);
    kernels::layer_norm_rows_parallel(x, h2, s2, rows, d, 1e-5);
    CHECK(h1 == h2);
    CHECK(s1 == s2);
}

TEST_CASE("parallel_for visits every index once") {
    for (bool parallel : {false, true}) {
        std::vector<std::atomic<int>> hits(1000);
        kernels::parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; }, parallel);
        for (auto& h : hits) CHECK(h.load() == 1);
    }
    CHECK(kernels::max_threads() >= 1);
}
