#include "depthprune/mask_learning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "depthprune/errors.hpp"
#include "depthprune/gumbel.hpp"
#include "depthprune/ops.hpp"
#include "depthprune/optim.hpp"

namespace depthprune {

namespace {

std::vector<double> probabilities(const Tensor& logits) {
    Tape no_grad(false);
    const Tensor p = ops::softmax_temperature(no_grad, logits.detach(), 1.0);
    return {p.data().begin(), p.data().end()};
}

bool can_transfer(const PruneMask& m, const BlockPartition& part, std::size_t donor,
                  std::size_t receiver, std::size_t k) {
    const std::size_t active = m.count(part.begin(donor), part.end(donor));
    const std::size_t receiver_active = m.count(part.begin(receiver), part.end(receiver));
    return active >= k && part.block_size - receiver_active >= k;
}

// Corrodes k layers of the donor block, then expands the receiver by k, on
// the differentiable path.
Tensor transfer(Tape& tape, const Tensor& m, const MarginalProfile& pi, const BlockPartition& part,
                std::size_t donor, std::size_t receiver, std::size_t k) {
    const CorrosionCandidate corroded = build_corrosion_candidate(tape, m, pi, part, donor, k);
    return build_expansion_candidate(tape, corroded.m_minus, pi, part, receiver, k).m_plus;
}

std::size_t donor_of(Transform t, std::size_t pair) {
    return t == Transform::Expand ? pair : pair + 1;
}
std::size_t receiver_of(Transform t, std::size_t pair) {
    return t == Transform::Expand ? pair + 1 : pair;
}

Transform argmax_transform(const Tensor& logits) {
    auto v = logits.data();
    const double best = *std::max_element(v.begin(), v.end());
    if (v[static_cast<std::size_t>(Transform::Identity)] == best) return Transform::Identity;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == best) return static_cast<Transform>(i);
    }
    return Transform::Identity;
}

void check_distribution(const PruningDistribution& dist, const OptionTable& table) {
    const BlockPartition& part = table.partition();
    if (dist.block_logits.size() != part.blocks()) {
        throw ContractError("distribution has " + std::to_string(dist.block_logits.size()) +
                            " blocks, partition has " + std::to_string(part.blocks()));
    }
    const std::size_t pairs = part.blocks() - 1;
    if (dist.transform_logits.size() != pairs) {
        throw ContractError("distribution has " + std::to_string(dist.transform_logits.size()) +
                            " transformation pairs, expected " + std::to_string(pairs));
    }
}

Checkpoint snapshot(const PruningDistribution& dist, const LayeredNet& student) {
    MaskLearningResult state{dist.clone(), student.deltas ? *student.deltas : std::vector<LowRankDelta>{}, {}};
    return to_checkpoint(state);
}

}  // namespace

const char* transform_name(Transform t) {
    switch (t) {
        case Transform::Corrode: return "corrode";
        case Transform::Identity: return "identity";
        case Transform::Expand: return "expand";
    }
    return "?";
}

PruningDistribution PruningDistribution::uniform(const BlockPartition& part, double tau,
                                                 std::size_t k) {
    part.validate();
    if (!(tau > 0.0)) throw DomainError("temperature must be positive");
    const OptionTable table(part);
    PruningDistribution dist;
    dist.partition = part;
    dist.tau = tau;
    dist.k = k;
    for (std::size_t j = 0; j < part.blocks(); ++j) {
        dist.block_logits.push_back(Tensor::zeros({table.size()}, true));
    }
    for (std::size_t j = 0; j + 1 < part.blocks(); ++j) {
        dist.transform_logits.push_back(Tensor::zeros({kTransformOptions}, true));
    }
    return dist;
}

std::vector<Tensor> PruningDistribution::parameters() const {
    std::vector<Tensor> params(block_logits);
    params.insert(params.end(), transform_logits.begin(), transform_logits.end());
    return params;
}

PruningDistribution PruningDistribution::clone() const {
    PruningDistribution out = *this;
    for (Tensor& t : out.block_logits) t = t.clone();
    for (Tensor& t : out.transform_logits) t = t.clone();
    return out;
}

double TauSchedule::at(std::size_t step, std::size_t total_steps) const {
    if (total_steps <= 1 || start == end) return start;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return start + (end - start) * frac;
}

void TrainConfig::validate() const {
    if (batch == 0) throw DomainError("batch size must be positive");
    if (!(lr_params > 0.0) || !(lr_logits > 0.0)) throw DomainError("learning rates must be positive");
    if (!(tau.start > 0.0) || !(tau.end > 0.0)) throw DomainError("temperature must be positive");
    if (activation_enabled && k == 0) throw DomainError("dynamic activation needs k >= 1");
    if (rank == 0) throw DomainError("delta rank must be positive");
    if (pi_refresh == 0) throw DomainError("pi_refresh must be positive");
    if (lambda_task < 0.0 || lambda_distill < 0.0) throw DomainError("loss weights must be non-negative");
}

Tensor pruning_loss(Tape& tape, const Tensor& student_out, const Tensor& teacher_out,
                    const Tensor& target, const TrainConfig& cfg) {
    if (student_out.shape() != teacher_out.shape() || student_out.shape() != target.shape()) {
        throw ContractError("pruning_loss: shapes " + shape_str(student_out.shape()) + ", " +
                            shape_str(teacher_out.shape()) + ", " + shape_str(target.shape()) +
                            " disagree");
    }
    Tensor task = ops::scale(tape, ops::mse(tape, student_out, target), cfg.lambda_task);
    Tensor distill = ops::scale(tape, ops::l1(tape, student_out, teacher_out), cfg.lambda_distill);
    return ops::add(tape, task, distill);
}

TrainingMask sample_training_mask(Tape& tape, const PruningDistribution& dist,
                                  const OptionTable& table, const MarginalProfile& pi, Rng& rng,
                                  bool activation_enabled) {
    check_distribution(dist, table);
    const BlockPartition& part = table.partition();
    TrainingMask out;
    std::vector<Tensor> locals;
    for (std::size_t j = 0; j < part.blocks(); ++j) {
        LocalMaskSample s = select_mask(tape, {dist.block_logits[j], dist.tau}, table, j, rng);
        locals.push_back(s.mask);
        out.trace.block_choices.push_back(s.choice);
    }
    Tensor m = ops::concat(tape, locals);
    if (activation_enabled) {
        if (dist.k == 0) throw ContractError("dynamic activation needs k >= 1");
        for (std::size_t pair = 0; pair + 1 < part.blocks(); ++pair) {
            Tensor weights = ops::straight_through(
                tape, gumbel_softmax(tape, {dist.transform_logits[pair], dist.tau}, rng));
            auto wv = weights.data();
            const auto chosen = static_cast<Transform>(std::find(wv.begin(), wv.end(), 1.0) - wv.begin());

            const PruneMask hard = PruneMask::from_tensor(m);
            std::vector<Tensor> candidates;
            bool chosen_infeasible = false;
            for (Transform t : {Transform::Corrode, Transform::Identity, Transform::Expand}) {
                if (t == Transform::Identity) {
                    candidates.push_back(m);
                } else if (can_transfer(hard, part, donor_of(t, pair), receiver_of(t, pair), dist.k)) {
                    candidates.push_back(
                        transfer(tape, m, pi, part, donor_of(t, pair), receiver_of(t, pair), dist.k));
                } else {
                    candidates.push_back(m);
                    if (t == chosen) chosen_infeasible = true;
                }
            }
            m = ops::vecmat(tape, weights, ops::stack(tape, candidates));
            out.trace.transforms.push_back(chosen);
            out.trace.degraded.push_back(chosen_infeasible);
        }
    }
    out.mask = m;
    return out;
}

MarginalProfile marginal_profile(const PruningDistribution& dist, const OptionTable& table) {
    check_distribution(dist, table);
    return marginal_profile(std::span<const Tensor>(dist.block_logits), table);
}

MarginalProfile transformed_marginal_profile(const PruningDistribution& dist,
                                             const OptionTable& table, std::size_t max_states) {
    check_distribution(dist, table);
    const BlockPartition& part = table.partition();
    const std::size_t blocks = part.blocks();
    const std::size_t pairs = blocks - 1;
    double states = std::pow(static_cast<double>(table.size()), static_cast<double>(blocks)) *
                    std::pow(3.0, static_cast<double>(pairs));
    if (states > static_cast<double>(max_states)) {
        throw DomainError("transformed marginal needs " + std::to_string(states) +
                          " enumeration states, limit is " + std::to_string(max_states));
    }
    const MarginalProfile pi = marginal_profile(dist, table);
    std::vector<std::vector<double>> p_block, q_pair;
    for (const Tensor& t : dist.block_logits) p_block.push_back(probabilities(t));
    for (const Tensor& t : dist.transform_logits) q_pair.push_back(probabilities(t));

    MarginalProfile out{std::vector<double>(part.n_layers, 0.0)};
    std::vector<std::size_t> choice(blocks, 0);
    while (true) {
        double p_choice = 1.0;
        for (std::size_t j = 0; j < blocks; ++j) p_choice *= p_block[j][choice[j]];
        const PruneMask base = compose_mask(choice, table);
        std::vector<std::size_t> trans(pairs, 0);
        while (true) {
            double p = p_choice;
            PruneMask m = base;
            for (std::size_t pair = 0; pair < pairs; ++pair) {
                p *= q_pair[pair][trans[pair]];
                const auto t = static_cast<Transform>(trans[pair]);
                if (t == Transform::Identity) continue;
                if (!can_transfer(m, part, donor_of(t, pair), receiver_of(t, pair), dist.k)) continue;
                m = apply_transformation(m, part, pair,
                                         t == Transform::Expand ? Direction::DonateForward
                                                                : Direction::DonateBackward,
                                         dist.k, pi);
            }
            for (std::size_t i = 0; i < m.size(); ++i) {
                if (m[i]) out.pi[i] += p;
            }
            std::size_t pos = 0;
            while (pos < pairs && ++trans[pos] == kTransformOptions) trans[pos++] = 0;
            if (pos == pairs) break;
        }
        std::size_t pos = 0;
        while (pos < blocks && ++choice[pos] == table.size()) choice[pos++] = 0;
        if (pos == blocks) break;
    }
    return out;
}

double total_mask_probability(const PruningDistribution& dist, const SampleTrace& trace) {
    if (trace.block_choices.size() != dist.block_logits.size()) {
        throw ContractError("trace does not match the distribution's block count");
    }
    if (trace.transforms.size() > dist.transform_logits.size()) {
        throw ContractError("trace has more transformations than block pairs");
    }
    double p = 1.0;
    for (std::size_t j = 0; j < trace.block_choices.size(); ++j) {
        p *= probabilities(dist.block_logits[j]).at(trace.block_choices[j]);
    }
    for (std::size_t pair = 0; pair < trace.transforms.size(); ++pair) {
        p *= probabilities(dist.transform_logits[pair]).at(static_cast<std::size_t>(trace.transforms[pair]));
    }
    return p;
}

MaskLearningResult train_mask(const LayeredNet& teacher, const Dataset& data,
                              const TrainConfig& cfg) {
    cfg.validate();
    const BlockPartition part{teacher.n_layers(), cfg.block_size, cfg.keep};
    const OptionTable table(part);
    if (data.size() == 0) throw ContractError("train_mask needs training data");

    PruningDistribution dist = PruningDistribution::uniform(part, cfg.tau.at(0, cfg.steps), cfg.k);
    LayeredNet student(teacher);
    for (Tensor& p : base_parameters(student)) p.set_requires_grad(false);
    attach_deltas(student, cfg.rank, static_cast<double>(cfg.rank), Rng::substream(cfg.seed, 1).next_u64());
    std::vector<Tensor> deltas = delta_parameters(student);
    for (Tensor& p : deltas) p.set_requires_grad(true);
    std::vector<Tensor> logits = dist.parameters();
    std::vector<Tensor> trainable = deltas;
    trainable.insert(trainable.end(), logits.begin(), logits.end());

    const Tensor* cond = teacher.needs_cond() ? &data.cond : nullptr;
    Tensor teacher_out;
    {
        Tape no_grad(false);
        teacher_out = forward(no_grad, teacher, data.x, cond);
    }

    Rng rng(cfg.seed);
    MarginalProfile pi = marginal_profile(dist, table);
    MaskLearningResult result;
    result.history.reserve(cfg.steps);
    std::vector<std::size_t> idx(cfg.batch);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (step % cfg.pi_refresh == 0) pi = marginal_profile(dist, table);
        dist.tau = cfg.tau.at(step, cfg.steps);
        for (std::size_t& i : idx) i = rng.below(data.size());
        const Dataset batch = data.rows(idx);
        const Tensor batch_teacher = gather_rows(teacher_out, idx);

        Tape tape;
        TrainingMask sampled = sample_training_mask(tape, dist, table, pi, rng, cfg.activation_enabled);
        Tensor out = forward_gated(tape, student, sampled.mask, batch.x, cond ? &batch.cond : nullptr);
        Tensor loss = pruning_loss(tape, out, batch_teacher, batch.target, cfg);
        if (!std::isfinite(loss.item())) {
            throw TrainingAborted("mask learning loss became non-finite at step " + std::to_string(step),
                                  step, snapshot(dist, student));
        }
        zero_grads(trainable);
        tape.backward(loss);
        // each parameter family is clipped on its own
        clip_grad_norm(deltas, cfg.grad_clip);
        clip_grad_norm(logits, cfg.grad_clip);
        sgd_step(deltas, cfg.lr_params);
        sgd_step(logits, cfg.lr_logits);
        result.history.push_back(loss.item());
    }
    for (Tensor& t : trainable) t.clear_grad();
    result.dist = std::move(dist);
    result.deltas = std::move(*student.deltas);
    return result;
}

MaskDecision decide_mask(const PruningDistribution& dist, const OptionTable& table) {
    check_distribution(dist, table);
    const BlockPartition& part = table.partition();
    const MarginalProfile pi = marginal_profile(dist, table);
    MaskDecision decision;

    // Start from the top-s layers of every block, then let each pair's
    // transformation move budget. Corrosion drops the lowest-pi active layer
    // and expansion adds the highest-pi inactive one, so the result keeps the
    // top-budget layers of each block.
    PruneMask m(part.n_layers);
    const PruneMask empty(part.n_layers);
    for (std::size_t j = 0; j < part.blocks(); ++j) {
        for (std::size_t i : highest_inactive(empty, pi, part.begin(j), part.end(j), part.keep)) {
            m.set(i, true);
        }
    }
    for (std::size_t pair = 0; pair + 1 < part.blocks(); ++pair) {
        const Transform t = argmax_transform(dist.transform_logits[pair]);
        std::string line = "pair " + std::to_string(pair) + " (blocks " + std::to_string(pair) +
                           "," + std::to_string(pair + 1) + "): " + transform_name(t);
        if (t != Transform::Identity) {
            if (can_transfer(m, part, donor_of(t, pair), receiver_of(t, pair), dist.k)) {
                m = apply_transformation(m, part, pair,
                                         t == Transform::Expand ? Direction::DonateForward
                                                                : Direction::DonateBackward,
                                         dist.k, pi);
                line += ", moved " + std::to_string(dist.k) + " layer(s) from block " +
                        std::to_string(donor_of(t, pair)) + " to block " +
                        std::to_string(receiver_of(t, pair));
            } else {
                line += " infeasible, kept identity";
            }
        }
        decision.log.push_back(std::move(line));
    }
    decision.mask = std::move(m);
    return decision;
}

Checkpoint to_checkpoint(const MaskLearningResult& result) {
    const PruningDistribution& dist = result.dist;
    Checkpoint ckpt;
    ckpt.add("p.meta", Tensor::vector({static_cast<double>(dist.partition.n_layers),
                                       static_cast<double>(dist.partition.block_size),
                                       static_cast<double>(dist.partition.keep), dist.tau,
                                       static_cast<double>(dist.k)}));
    for (std::size_t j = 0; j < dist.block_logits.size(); ++j) {
        ckpt.add("p.block." + std::to_string(j), dist.block_logits[j].detach());
    }
    for (std::size_t j = 0; j < dist.transform_logits.size(); ++j) {
        ckpt.add("q.pair." + std::to_string(j), dist.transform_logits[j].detach());
    }
    for (std::size_t i = 0; i < result.deltas.size(); ++i) {
        const LowRankDelta& delta = result.deltas[i];
        const std::string p = "delta." + std::to_string(i) + ".";
        ckpt.add(p + "in.A", delta.w_in.a.detach());
        ckpt.add(p + "in.B", delta.w_in.b.detach());
        ckpt.add(p + "out.A", delta.w_out.a.detach());
        ckpt.add(p + "out.B", delta.w_out.b.detach());
    }
    if (!result.deltas.empty()) {
        ckpt.add("delta.meta", Tensor::vector({static_cast<double>(result.deltas.front().rank),
                                               result.deltas.front().alpha}));
    }
    return ckpt;
}

PruningDistribution distribution_from_checkpoint(const Checkpoint& ckpt) {
    const Tensor& meta = ckpt.get("p.meta");
    if (meta.size() != 5) throw CheckpointError("p.meta must hold 5 values");
    const BlockPartition part{static_cast<std::size_t>(meta.at(0)), static_cast<std::size_t>(meta.at(1)),
                              static_cast<std::size_t>(meta.at(2))};
    PruningDistribution dist = PruningDistribution::uniform(part, meta.at(3), static_cast<std::size_t>(meta.at(4)));
    for (std::size_t j = 0; j < dist.block_logits.size(); ++j) {
        const Tensor& t = ckpt.get("p.block." + std::to_string(j));
        if (t.size() != dist.block_logits[j].size()) throw CheckpointError("p.block size mismatch");
        std::copy(t.data().begin(), t.data().end(), dist.block_logits[j].mutable_data().begin());
    }
    for (std::size_t j = 0; j < dist.transform_logits.size(); ++j) {
        const Tensor& t = ckpt.get("q.pair." + std::to_string(j));
        if (t.size() != kTransformOptions) throw CheckpointError("q.pair size mismatch");
        std::copy(t.data().begin(), t.data().end(), dist.transform_logits[j].mutable_data().begin());
    }
    return dist;
}

}  // namespace depthprune
