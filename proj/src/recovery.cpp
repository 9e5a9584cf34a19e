#include "depthprune/recovery.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <thread>

#include "depthprune/baselines.hpp"
#include "depthprune/errors.hpp"
#include "depthprune/ops.hpp"
#include "depthprune/optim.hpp"
#include "depthprune/rng.hpp"

namespace depthprune {

namespace {

const Tensor* cond_of(const LayeredNet& net, const Dataset& data) {
    return net.needs_cond() ? &data.cond : nullptr;
}

Tensor full_forward(const LayeredNet& net, const Dataset& data) {
    Tape tape(false);
    return forward(tape, net, data.x, cond_of(net, data));
}

}  // namespace

TeacherResult train_teacher(const TaskData& data, const TeacherConfig& cfg) {
    if (cfg.steps == 0) throw DomainError("teacher training needs at least one step");
    if (cfg.batch == 0) throw DomainError("batch size must be positive");
    TeacherResult result{init_net(cfg.n_layers, cfg.d, cfg.c, cfg.seed), 0.0, false, {}};
    LayeredNet& net = result.net;
    std::vector<Tensor> params = base_parameters(net);
    for (Tensor& p : params) p.set_requires_grad(true);
    Adam adam(params, cfg.lr);

    Rng rng = Rng::substream(cfg.seed, 2);
    std::vector<std::size_t> idx(cfg.batch);
    result.history.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t& i : idx) i = rng.below(data.train.size());
        const Dataset batch = data.train.rows(idx);
        Tape tape;
        Tensor out = forward(tape, net, batch.x, cond_of(net, batch));
        Tensor loss = ops::mse(tape, out, batch.target);
        if (!std::isfinite(loss.item())) {
            throw TrainingAborted("teacher loss became non-finite at step " + std::to_string(step), step,
                                  to_checkpoint(net));
        }
        zero_grads(params);
        tape.backward(loss);
        clip_grad_norm(params, cfg.grad_clip);
        const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
        adam.set_lr(cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        adam.step();
        result.history.push_back(loss.item());
    }
    for (Tensor& p : params) {
        p.clear_grad();
        p.set_requires_grad(false);
    }
    result.heldout_loss = task_loss(net, PruneMask::ones(net.n_layers()), data.heldout);
    result.reached_target = result.heldout_loss < kTeacherTargetLoss;
    return result;
}

TeacherResult train_teacher(const TaskData& data, std::size_t n_layers, std::size_t d,
                            std::uint64_t seed, std::size_t steps) {
    TeacherConfig cfg;
    cfg.n_layers = n_layers;
    cfg.d = d;
    cfg.seed = seed;
    cfg.steps = steps;
    return train_teacher(data, cfg);
}

double recovery_ratio(double loss_init, double loss_final) {
    if (loss_init == 0.0) return loss_final == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return loss_final / loss_init;
}

double distill_loss(const LayeredNet& student, const PruneMask& mask, const Dataset& data,
                    const Tensor& teacher_out) {
    Tape tape(false);
    const Tensor out = forward_gated(tape, student, mask.to_tensor(), data.x, cond_of(student, data));
    return ops::l1(tape, out, teacher_out).item();
}

FinetuneResult finetune_student(const LayeredNet& teacher, const PruneMask& mask,
                                const TaskData& data, const FinetuneConfig& cfg,
                                const std::string& strategy) {
    if (mask.size() != teacher.n_layers()) {
        throw ContractError("mask has " + std::to_string(mask.size()) + " entries, net has " +
                            std::to_string(teacher.n_layers()) + " layers");
    }
    if (cfg.batch == 0) throw DomainError("batch size must be positive");
    if (!(cfg.lr > 0.0)) throw DomainError("learning rate must be positive");

    LayeredNet student(teacher);
    for (Tensor& p : base_parameters(student)) p.set_requires_grad(false);
    attach_deltas(student, cfg.rank, static_cast<double>(cfg.rank), Rng::substream(cfg.seed, 3).next_u64());
    std::vector<Tensor> deltas = delta_parameters(student);
    for (Tensor& p : deltas) p.set_requires_grad(true);

    const Tensor teacher_train = full_forward(teacher, data.train);
    const Tensor teacher_heldout = full_forward(teacher, data.heldout);
    const Tensor gate = mask.to_tensor();

    RecoveryRecord record{strategy, cfg.seed, mask, 0.0, 0.0, 1.0};
    record.loss_init = distill_loss(student, mask, data.heldout, teacher_heldout);

    Rng rng = Rng::substream(cfg.seed, 4);
    std::vector<std::size_t> idx(cfg.batch);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t& i : idx) i = rng.below(data.train.size());
        const Dataset batch = data.train.rows(idx);
        const Tensor target = gather_rows(teacher_train, idx);
        Tape tape;
        Tensor out = forward_gated(tape, student, gate, batch.x, cond_of(student, batch));
        Tensor loss = ops::l1(tape, out, target);
        if (!std::isfinite(loss.item())) {
            throw TrainingAborted("fine-tuning loss became non-finite at step " + std::to_string(step),
                                  step, to_checkpoint(student));
        }
        if (!loss.requires_grad()) continue;  // every retained layer removed: nothing to train
        zero_grads(deltas);
        tape.backward(loss);
        clip_grad_norm(deltas, cfg.grad_clip);
        sgd_step(deltas, cfg.lr);
    }
    for (Tensor& p : deltas) p.clear_grad();
    record.loss_final = distill_loss(student, mask, data.heldout, teacher_heldout);
    record.recovery_ratio = recovery_ratio(record.loss_init, record.loss_final);
    return FinetuneResult{extract_subnetwork(student, mask), std::move(record)};
}

const std::vector<std::string>& benchmark_strategies() {
    static const std::vector<std::string> names{"learned", "block-local", "random-min",
                                                "similarity", "sensitivity", "uniform"};
    return names;
}

PruneMask strategy_mask(const std::string& strategy, const LayeredNet& teacher,
                        const TaskData& data, const BenchmarkConfig& cfg, std::uint64_t seed) {
    const BlockPartition part{teacher.n_layers(), cfg.mask.block_size, cfg.mask.keep};
    part.validate();
    const std::size_t retain = part.blocks() * part.keep;
    if (strategy == "learned" || strategy == "block-local") {
        TrainConfig tc = cfg.mask;
        tc.seed = seed;
        tc.activation_enabled = strategy == "learned";
        const MaskLearningResult learned = train_mask(teacher, data.train, tc);
        return decide_mask(learned.dist, OptionTable(part)).mask;
    }
    if (strategy == "random-min") {
        return random_min(teacher, data.heldout.head(cfg.probe), retain, cfg.random_trials, seed).mask;
    }
    if (strategy == "similarity") return similarity_prune(teacher, data.train, retain, cfg.probe).mask;
    if (strategy == "sensitivity") return sensitivity_prune(teacher, data.train, retain, cfg.probe).mask;
    if (strategy == "uniform") return uniform_prune(teacher.n_layers(), retain, cfg.uniform_phase).mask;
    throw DomainError("unknown strategy '" + strategy + "'");
}

std::vector<RecoveryRecord> run_benchmark(const LayeredNet& teacher, const TaskData& data,
                                          const BenchmarkConfig& cfg,
                                          const std::vector<std::uint64_t>& seeds,
                                          std::size_t jobs) {
    const std::vector<std::string>& strategies =
        cfg.strategies.empty() ? benchmark_strategies() : cfg.strategies;
    struct Cell {
        std::string strategy;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (const std::string& s : strategies) {
        for (std::uint64_t seed : seeds) cells.push_back({s, seed});
    }
    std::vector<RecoveryRecord> records(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                const PruneMask mask = strategy_mask(cells[i].strategy, teacher, data, cfg, cells[i].seed);
                FinetuneConfig fc = cfg.finetune;
                fc.seed = cells[i].seed;
                records[i] = finetune_student(teacher, mask, data, fc, cells[i].strategy).record;
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(cells.size(), 1));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (const std::exception_ptr& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return records;
}

}  // namespace depthprune
