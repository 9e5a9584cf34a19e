#include "depthprune/gumbel.hpp"

#include <algorithm>
#include <cmath>

#include "depthprune/errors.hpp"
#include "depthprune/ops.hpp"

namespace depthprune {

namespace {

void validate(const CategoricalLogits& logits) {
    if (!(logits.tau > 0.0)) throw DomainError("temperature must be positive");
    if (logits.values.size() == 0) throw ContractError("categorical logits need at least one entry");
    for (double v : logits.values.data()) {
        if (!std::isfinite(v)) throw DomainError("categorical logits must be finite");
    }
}

}  // namespace

double gumbel_from_uniform(double u) {
    u = std::clamp(u, kUniformEps, 1.0 - kUniformEps);
    return -std::log(-std::log(u));
}

Tensor sample_gumbel(std::size_t n, Rng& rng) {
    std::vector<double> values(n);
    for (double& v : values) v = gumbel_from_uniform(rng.uniform());
    return Tensor::vector(std::move(values));
}

Tensor gumbel_softmax_with_noise(Tape& tape, const CategoricalLogits& logits, const Tensor& noise) {
    validate(logits);
    return ops::softmax_temperature(tape, ops::add(tape, logits.values, noise), logits.tau);
}

Tensor gumbel_softmax(Tape& tape, const CategoricalLogits& logits, Rng& rng) {
    validate(logits);
    return gumbel_softmax_with_noise(tape, logits, sample_gumbel(logits.values.size(), rng));
}

LocalMaskSample select_mask(Tape& tape, const CategoricalLogits& logits, const OptionTable& table,
                            std::size_t block, Rng& rng) {
    if (block >= table.partition().blocks()) {
        throw ContractError("block " + std::to_string(block) + " out of range");
    }
    if (logits.values.size() != table.size()) {
        throw ContractError("block " + std::to_string(block) + " has " +
                            std::to_string(logits.values.size()) + " logits but " +
                            std::to_string(table.size()) + " options");
    }
    Tensor soft = gumbel_softmax(tape, logits, rng);
    Tensor hard = ops::straight_through(tape, soft);
    auto hv = hard.data();
    const auto choice = static_cast<std::size_t>(std::find(hv.begin(), hv.end(), 1.0) - hv.begin());
    return LocalMaskSample{ops::vecmat(tape, hard, table.matrix()), choice};
}

}  // namespace depthprune
