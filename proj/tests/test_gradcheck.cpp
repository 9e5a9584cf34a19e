#include <doctest.h>

#include "depthprune/errors.hpp"
#include "depthprune/gradcheck.hpp"
#include "depthprune/gradcheck_suite.hpp"
#include "depthprune/ops.hpp"
#include "depthprune/rng.hpp"

using namespace depthprune;

TEST_CASE("finite_diff_check on sum of squares") {
    const double err = finite_diff_check(
        [](Tape& t, const Tensor& x) { return ops::sum(t, ops::mul(t, x, x)); }, Tensor::vector({1.0, 2.0}));
    CHECK(err < 1e-7);
}

TEST_CASE("finite_diff_check on layer_norm then gelu") {
    Rng rng(21);
    std::vector<double> v(6);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    Tensor g = Tensor::full({3}, 1.0), b = Tensor::zeros({3});
    const double err = finite_diff_check(
        [&](Tape& t, const Tensor& x) {
            return ops::sum(t, ops::gelu(t, ops::layer_norm(t, x, g, b)));
        },
        Tensor::matrix(2, 3, v));
    CHECK(err < 1e-5);
}

TEST_CASE("constant function has zero error") {
    const double err = finite_diff_check([](Tape&, const Tensor&) { return Tensor::scalar(4.0); },
                                         Tensor::vector({1.0, 2.0, 3.0}));
    CHECK(err == 0.0);
}

TEST_CASE("non-deterministic functions are rejected") {
    int calls = 0;
    ScalarFn f = [&](Tape&, const Tensor&) { return Tensor::scalar(static_cast<double>(++calls)); };
    CHECK_THROWS_AS(finite_diff_check(f, Tensor::vector({1.0})), ContractError);
    CHECK_THROWS_AS(finite_diff_check([](Tape& t, const Tensor& x) { return ops::sum(t, x); },
                                      Tensor::vector({1.0}), 0.0),
                    DomainError);
}

TEST_CASE("every case of the suite is within tolerance") {
    for (const GradcheckCase& c : run_gradcheck_suite(80, 5)) {
        INFO(c.name << " " << c.max_error);
        CHECK(c.passed());
    }
}
