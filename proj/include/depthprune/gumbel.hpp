#pragma once

#include <cstddef>

#include "depthprune/mask_space.hpp"
#include "depthprune/rng.hpp"
#include "depthprune/tensor.hpp"

namespace depthprune {

/// Unnormalized log-probabilities of a categorical choice plus its
/// relaxation temperature.
struct CategoricalLogits {
    Tensor values;
    double tau = 1.0;
};

/// Uniform draws are nudged into [eps, 1 - eps] so the noise stays finite.
inline constexpr double kUniformEps = 1e-12;

/// -log(-log(u)) with u clamped into [kUniformEps, 1 - kUniformEps].
double gumbel_from_uniform(double u);

/// n independent standard Gumbel draws.
Tensor sample_gumbel(std::size_t n, Rng& rng);

/// softmax((logits + noise) / tau) with caller-supplied noise.
Tensor gumbel_softmax_with_noise(Tape& tape, const CategoricalLogits& logits, const Tensor& noise);

/// Relaxed categorical sample on the simplex; differentiable in the logits.
Tensor gumbel_softmax(Tape& tape, const CategoricalLogits& logits, Rng& rng);

struct LocalMaskSample {
    Tensor mask;         ///< [B], hard 0/1 values, gradients reach the logits
    std::size_t choice;  ///< index of the selected option
};

/// Hard local mask table[o] for a Gumbel-max choice o, computed as
/// straight_through(gumbel_softmax(logits))^T * table so the logits get
/// straight-through gradients.
LocalMaskSample select_mask(Tape& tape, const CategoricalLogits& logits, const OptionTable& table,
                            std::size_t block, Rng& rng);

}  // namespace depthprune
