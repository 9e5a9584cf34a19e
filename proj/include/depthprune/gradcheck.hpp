#pragma once

#include <functional>

#include "depthprune/tensor.hpp"

namespace depthprune {

/// A deterministic scalar-valued function of one tensor, built on the tape.
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

inline constexpr double kFiniteDiffStep = 1e-6;

/// Compares the taped gradient of f at x with central differences.
/// Returns max_i |analytic_i - numeric_i| / (|analytic_i| + |numeric_i| + 1e-12).
/// Throws ContractError if two evaluations of f at x disagree.
double finite_diff_check(const ScalarFn& f, const Tensor& x, double step = kFiniteDiffStep);

/// Same comparison, but the taped gradient comes from `analytic` while the
/// differences are taken on `f`. Used for estimators such as the
/// straight-through path, whose gradient is that of a smooth surrogate.
double finite_diff_check(const ScalarFn& analytic, const ScalarFn& f, const Tensor& x,
                         double step = kFiniteDiffStep);

}  // namespace depthprune
