#include "depthprune/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "depthprune/errors.hpp"
#include "depthprune/kernels.hpp"
#include "depthprune/ops.hpp"
#include "depthprune/report.hpp"
#include "depthprune/rng.hpp"

namespace depthprune {

namespace {

void check_retain(std::size_t n, std::size_t retain) {
    if (retain > n) {
        throw DomainError("cannot retain " + std::to_string(retain) + " of " + std::to_string(n) +
                          " layers");
    }
}

void check_data(const Dataset& data) {
    if (data.size() == 0) throw ContractError("baseline needs a non-empty probe batch");
}

// Removes layers in the order given until `retain` remain.
PruneMask prune_in_order(std::size_t n, std::size_t retain, const std::vector<std::size_t>& order) {
    PruneMask mask = PruneMask::ones(n);
    for (std::size_t i = 0; i < n - retain; ++i) mask.set(order[i], false);
    return mask;
}

// Layer indices sorted by score; ties keep the lower index first.
std::vector<std::size_t> ranked(const std::vector<double>& score, bool descending) {
    std::vector<std::size_t> order(score.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return descending ? score[a] > score[b] : score[a] < score[b];
    });
    return order;
}

PruneMask random_mask(std::size_t n, std::size_t retain, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < retain; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    PruneMask mask(n);
    for (std::size_t i = 0; i < retain; ++i) mask.set(idx[i], true);
    return mask;
}

}  // namespace

double task_loss(const LayeredNet& net, const PruneMask& mask, const Dataset& data) {
    Tape tape(false);
    const Tensor out = forward_gated(tape, net, mask.to_tensor(), data.x,
                                     net.needs_cond() ? &data.cond : nullptr);
    return ops::mse(tape, out, data.target).item();
}

StrategyResult random_min(const LayeredNet& teacher, const Dataset& data, std::size_t retain,
                          std::size_t trials, std::uint64_t seed, bool allow_parallel) {
    const std::size_t n = teacher.n_layers();
    check_retain(n, retain);
    if (trials == 0) throw DomainError("random_min needs at least one trial");
    check_data(data);

    std::vector<PruneMask> masks;
    masks.reserve(trials);
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng = Rng::substream(seed, t);
        masks.push_back(random_mask(n, retain, rng));
    }
    std::vector<double> losses(trials);
    kernels::parallel_for(
        trials, [&](std::size_t t) { losses[t] = task_loss(teacher, masks[t], data); },
        allow_parallel);

    const std::size_t best = static_cast<std::size_t>(
        std::min_element(losses.begin(), losses.end()) - losses.begin());
    StrategyResult result{masks[best], losses[best], std::vector<double>(n, 0.0), losses};
    std::vector<std::size_t> kept(n, 0);
    for (std::size_t t = 0; t < trials; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            if (masks[t][i]) {
                result.diagnostics[i] += losses[t];
                ++kept[i];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (kept[i] > 0) result.diagnostics[i] /= static_cast<double>(kept[i]);
    }
    return result;
}

StrategyResult similarity_prune(const LayeredNet& teacher, const Dataset& data, std::size_t retain,
                                std::size_t probe) {
    const std::size_t n = teacher.n_layers();
    check_retain(n, retain);
    check_data(data);
    const Dataset batch = data.head(probe);
    const std::vector<Tensor> states =
        hidden_states(teacher, Tensor::full({n}, 1.0), batch.x, teacher.needs_cond() ? &batch.cond : nullptr);

    const std::size_t rows = batch.size();
    const std::size_t d = teacher.d;
    std::vector<double> score(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto a = states[i].data();
        auto b = states[i + 1].data();
        double total = 0.0;
        std::size_t used = 0;
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double u = a[r * d + k], v = b[r * d + k];
                dot += u * v;
                na += u * u;
                nb += v * v;
            }
            if (na == 0.0 || nb == 0.0) continue;
            total += dot / (std::sqrt(na) * std::sqrt(nb));
            ++used;
        }
        if (used == 0) {
            throw ContractError("layer " + std::to_string(i) + " has only zero-norm activations");
        }
        score[i] = total / static_cast<double>(used);
    }
    const std::vector<std::size_t> order = ranked(score, true);
    StrategyResult result{prune_in_order(n, retain, order), 0.0, score, {}};
    for (std::size_t i = 0; i < n - retain; ++i) result.score += score[order[i]];
    return result;
}

StrategyResult sensitivity_prune(const LayeredNet& teacher, const Dataset& data, std::size_t retain,
                                 std::size_t probe) {
    const std::size_t n = teacher.n_layers();
    check_retain(n, retain);
    check_data(data);
    const Dataset batch = data.head(probe);
    const double base = task_loss(teacher, PruneMask::ones(n), batch);
    std::vector<double> score(n);
    kernels::parallel_for(n, [&](std::size_t i) {
        PruneMask mask = PruneMask::ones(n);
        mask.set(i, false);
        score[i] = task_loss(teacher, mask, batch) - base;
    });
    const std::vector<std::size_t> order = ranked(score, false);
    StrategyResult result{prune_in_order(n, retain, order), 0.0, score, {}};
    for (std::size_t i = 0; i < n - retain; ++i) result.score += score[order[i]];
    return result;
}

StrategyResult uniform_prune(std::size_t n_layers, std::size_t retain, std::size_t phase) {
    check_retain(n_layers, retain);
    PruneMask mask(n_layers);
    if (retain > 0) {
        const std::size_t period = (n_layers + retain - 1) / retain;
        if (phase >= period) {
            throw DomainError("phase " + std::to_string(phase) + " must be below " + std::to_string(period));
        }
        for (std::size_t i = 0; i < retain; ++i) {
            // round((phase * M + i * N) / M), halves rounding up
            const std::size_t num = phase * retain + i * n_layers;
            mask.set(((2 * num + retain) / (2 * retain)) % n_layers, true);
        }
    }
    StrategyResult result{mask, 0.0, std::vector<double>(n_layers, 0.0), {}};
    for (std::size_t i = 0; i < n_layers; ++i) result.diagnostics[i] = mask[i] ? 1.0 : 0.0;
    return result;
}

void write_diagnostics(const StrategyResult& result, const std::filesystem::path& path) {
    std::string text = "layer,score\n";
    char buf[64];
    for (std::size_t i = 0; i < result.diagnostics.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, result.diagnostics[i]);
        text += buf;
    }
    write_text_file(path, text);
}

}  // namespace depthprune
