#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace depthprune {

inline constexpr double kGradcheckTolerance = 1e-4;

struct GradcheckCase {
    std::string name;
    double max_error = 0.0;  ///< worst finite_diff_check value over the trials
    bool passed() const { return max_error < kGradcheckTolerance; }
};

/// Finite-difference checks of every differentiable op, the network forward
/// and the straight-through sampling path, each on `trials` random inputs.
std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed = 80, std::size_t trials = 20);

}  // namespace depthprune
