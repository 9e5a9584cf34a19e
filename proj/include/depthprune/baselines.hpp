#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "depthprune/layered_net.hpp"
#include "depthprune/mask_space.hpp"
#include "depthprune/task.hpp"

namespace depthprune {

struct StrategyResult {
    PruneMask mask;
    double score = 0.0;               ///< strategy-native selection score
    std::vector<double> diagnostics;  ///< one score per layer
    std::vector<double> trial_losses; ///< random_min only, in trial order
};

inline constexpr std::size_t kProbeSamples = 256;

/// Mean squared error against the task target of the gated net.
double task_loss(const LayeredNet& net, const PruneMask& mask, const Dataset& data);

/// Best of `trials` uniformly drawn popcount-`retain` masks by task loss.
/// Trial t draws its mask from substream (seed, t), so trials may be
/// evaluated concurrently. Diagnostics hold the mean loss of the trials that
/// kept each layer (0 for layers no trial kept).
StrategyResult random_min(const LayeredNet& teacher, const Dataset& data, std::size_t retain,
                          std::size_t trials, std::uint64_t seed, bool allow_parallel = true);

/// Prunes the layers whose input and output are most similar (mean cosine
/// over the probe rows). Ties prune the lower index first.
StrategyResult similarity_prune(const LayeredNet& teacher, const Dataset& data, std::size_t retain,
                                std::size_t probe = kProbeSamples);

/// Prunes the layers whose single-layer removal raises the task loss least.
StrategyResult sensitivity_prune(const LayeredNet& teacher, const Dataset& data, std::size_t retain,
                                 std::size_t probe = kProbeSamples);

/// Keeps layers round(phase + i * N / M) for i < M.
StrategyResult uniform_prune(std::size_t n_layers, std::size_t retain, std::size_t phase = 0);

/// "layer,score" rows of the diagnostics.
void write_diagnostics(const StrategyResult& result, const std::filesystem::path& path);

}  // namespace depthprune
