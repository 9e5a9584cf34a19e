#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "depthprune/checkpoint.hpp"
#include "depthprune/layered_net.hpp"
#include "depthprune/mask_space.hpp"
#include "depthprune/rng.hpp"
#include "depthprune/task.hpp"
#include "depthprune/tensor.hpp"

namespace depthprune {

/// Options of one adjacent-block transformation, in logit order.
enum class Transform : std::size_t {
    Corrode = 0,   ///< block j+1 gives k layers to block j
    Identity = 1,
    Expand = 2,    ///< block j gives k layers to block j+1
};
inline constexpr std::size_t kTransformOptions = 3;
const char* transform_name(Transform t);

/// Learnable blockwise mask distribution p(m) and transformation
/// distribution q(t) over adjacent block pairs.
struct PruningDistribution {
    BlockPartition partition;
    std::vector<Tensor> block_logits;      ///< K tensors of C(B,s) logits
    std::vector<Tensor> transform_logits;  ///< K-1 tensors of 3 logits
    double tau = 1.0;
    std::size_t k = 1;

    /// All-zero logits, i.e. uniform p(m) and q(t).
    static PruningDistribution uniform(const BlockPartition& part, double tau = 1.0,
                                       std::size_t k = 1);

    std::vector<Tensor> parameters() const;
    PruningDistribution clone() const;
};

/// Linear interpolation from start to end over the run; constant when equal.
struct TauSchedule {
    double start = 1.0;
    double end = 1.0;
    double at(std::size_t step, std::size_t total_steps) const;
};

struct TrainConfig {
    double lambda_task = 1.0;     ///< weight of MSE(student, target)
    double lambda_distill = 1.0;  ///< weight of L1(student, teacher)
    std::size_t steps = 2000;
    double lr_params = 0.01;
    double lr_logits = 0.05;
    std::size_t batch = 64;
    std::uint64_t seed = 80;
    bool activation_enabled = true;
    TauSchedule tau;
    std::size_t k = 1;
    double grad_clip = 1.0;  ///< global-norm bound, applied to deltas and logits separately
    std::size_t block_size = 4;
    std::size_t keep = 2;
    std::size_t rank = 4;
    /// Steps between recomputations of the marginal profile used for
    /// candidate construction.
    std::size_t pi_refresh = 1;

    void validate() const;
};

/// lambda_task * MSE(student, target) + lambda_distill * L1(student, teacher).
Tensor pruning_loss(Tape& tape, const Tensor& student_out, const Tensor& teacher_out,
                    const Tensor& target, const TrainConfig& cfg);

struct SampleTrace {
    std::vector<std::size_t> block_choices;
    std::vector<Transform> transforms;  ///< sampled option per pair; empty when disabled
    std::vector<bool> degraded;         ///< sampled option was infeasible, identity used
};

struct TrainingMask {
    Tensor mask;  ///< [N], hard 0/1 values carrying gradients to both logit families
    SampleTrace trace;
};

/// Samples local masks per block, then (when enabled) one transformation per
/// adjacent pair in ascending order, each applied on top of the previous.
TrainingMask sample_training_mask(Tape& tape, const PruningDistribution& dist,
                                  const OptionTable& table, const MarginalProfile& pi, Rng& rng,
                                  bool activation_enabled);

MarginalProfile marginal_profile(const PruningDistribution& dist, const OptionTable& table);

/// Marginals over the transformation-augmented distribution p(m'), by exact
/// enumeration. Diagnostic only; throws DomainError beyond max_states traces.
MarginalProfile transformed_marginal_profile(const PruningDistribution& dist,
                                             const OptionTable& table,
                                             std::size_t max_states = 20'000'000);

/// prod_j p_j(choice_j) * prod_pairs q_pair(t_pair), with the reachability
/// factor r fixed to 1.
double total_mask_probability(const PruningDistribution& dist, const SampleTrace& trace);

struct MaskLearningResult {
    PruningDistribution dist;
    std::vector<LowRankDelta> deltas;
    std::vector<double> history;  ///< training loss per step
};

/// Jointly trains p(m), q(t) and low-rank deltas on a frozen teacher.
/// Throws TrainingAborted on a non-finite loss.
MaskLearningResult train_mask(const LayeredNet& teacher, const Dataset& data,
                              const TrainConfig& cfg);

struct MaskDecision {
    PruneMask mask;
    std::vector<std::string> log;  ///< one line per block pair
};

/// Picks each pair's most likely transformation (identity wins ties, then
/// lower index), moves retention budget accordingly, and keeps the top-pi
/// layers of every block.
MaskDecision decide_mask(const PruningDistribution& dist, const OptionTable& table);

Checkpoint to_checkpoint(const MaskLearningResult& result);
PruningDistribution distribution_from_checkpoint(const Checkpoint& ckpt);

}  // namespace depthprune
