#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "depthprune/layered_net.hpp"
#include "depthprune/mask_learning.hpp"
#include "depthprune/mask_space.hpp"
#include "depthprune/task.hpp"

namespace depthprune {

inline constexpr double kTeacherTargetLoss = 0.05;

struct TeacherConfig {
    std::size_t n_layers = 12;
    std::size_t d = 16;
    std::size_t c = kTaskCondDim;
    std::uint64_t seed = 80;
    std::size_t steps = 5000;
    double lr = 3e-3;  ///< peak Adam rate, cosine-decayed to zero
    std::size_t batch = 64;
    double grad_clip = 1.0;
};

struct TeacherResult {
    LayeredNet net;
    double heldout_loss = 0.0;  ///< MSE against the target on the held-out split
    bool reached_target = false;
    std::vector<double> history;
};

/// Trains every base parameter of a fresh net on the synthetic task.
TeacherResult train_teacher(const TaskData& data, const TeacherConfig& cfg);
TeacherResult train_teacher(const TaskData& data, std::size_t n_layers, std::size_t d,
                            std::uint64_t seed, std::size_t steps);

struct FinetuneConfig {
    std::size_t steps = 2000;
    double lr = 0.05;
    std::size_t batch = 64;
    std::size_t rank = 4;
    std::uint64_t seed = 80;
    double grad_clip = 1.0;
};

struct RecoveryRecord {
    std::string strategy;
    std::uint64_t seed = 0;
    PruneMask mask;
    double loss_init = 0.0;
    double loss_final = 0.0;
    double recovery_ratio = 1.0;
};

/// loss_final / loss_init, and 1 when both are zero.
double recovery_ratio(double loss_init, double loss_final);

struct FinetuneResult {
    LayeredNet student;  ///< pruned layers removed, deltas merged
    RecoveryRecord record;
};

/// Mean L1 between the masked student and precomputed teacher outputs.
double distill_loss(const LayeredNet& student, const PruneMask& mask, const Dataset& data,
                    const Tensor& teacher_out);

/// Distills a masked copy of the teacher (plus fresh low-rank deltas) back
/// toward the teacher. Both losses are measured on the held-out split.
FinetuneResult finetune_student(const LayeredNet& teacher, const PruneMask& mask,
                                const TaskData& data, const FinetuneConfig& cfg,
                                const std::string& strategy = "custom");

struct BenchmarkConfig {
    TrainConfig mask;
    FinetuneConfig finetune;
    std::size_t random_trials = 8;
    std::size_t probe = 256;
    std::size_t uniform_phase = 0;
    std::vector<std::string> strategies;  ///< empty means benchmark_strategies()
};

/// learned, block-local, random-min, similarity, sensitivity, uniform.
const std::vector<std::string>& benchmark_strategies();

/// The mask a named strategy picks at 50% retention (cfg.mask.keep of every
/// cfg.mask.block_size layers) for one seed.
PruneMask strategy_mask(const std::string& strategy, const LayeredNet& teacher,
                        const TaskData& data, const BenchmarkConfig& cfg, std::uint64_t seed);

/// One record per (strategy, seed) cell, run on up to `jobs` threads. The
/// result does not depend on `jobs`.
std::vector<RecoveryRecord> run_benchmark(const LayeredNet& teacher, const TaskData& data,
                                          const BenchmarkConfig& cfg,
                                          const std::vector<std::uint64_t>& seeds,
                                          std::size_t jobs = 1);

}  // namespace depthprune
