#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "depthprune/checkpoint.hpp"
#include "depthprune/mask_space.hpp"
#include "depthprune/tensor.hpp"

namespace depthprune {

/// Conditioning-driven scale/shift applied after the block's layer norm.
struct Modulation {
    Tensor w_cond;  ///< [c x 2d]; undefined once stripped
    Tensor b_cond;  ///< [2d]; undefined once stripped
    struct Cache {
        Tensor scale;  ///< [d]
        Tensor shift;  ///< [d]
    };
    /// When present, forwards use these and never read w_cond/b_cond.
    std::optional<Cache> cached;

    bool live() const { return !cached.has_value(); }
};

/// Residual MLP block: LayerNorm -> modulate -> Linear(d, 4d) -> GELU -> Linear(4d, d).
struct LayerBlock {
    Tensor norm_gain;  ///< [d]
    Tensor norm_bias;  ///< [d]
    Tensor w_in;       ///< [d x 4d]
    Tensor b_in;       ///< [4d]
    Tensor w_out;      ///< [4d x d]
    Tensor b_out;      ///< [d]
    std::optional<Modulation> modulation;
};

struct LowRankFactors {
    Tensor a;  ///< [rows x r], random init
    Tensor b;  ///< [r x cols], zero init
};

/// Additive low-rank update of one block: W_eff = W + (alpha / r) * A * B.
struct LowRankDelta {
    std::size_t rank = 4;
    double alpha = 4.0;
    LowRankFactors w_in;
    LowRankFactors w_out;

    double factor() const { return alpha / static_cast<double>(rank); }
};

/// N gated residual blocks between an input and an output projection.
///
/// Copies are deep: parameters are never shared between two nets.
struct LayeredNet {
    std::size_t d = 0;        ///< embedding width
    std::size_t c = 0;        ///< conditioning width, 0 once stripped
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Tensor in_w, in_b;        ///< [in x d], [d]
    Tensor out_w, out_b;      ///< [d x out], [out]
    std::vector<LayerBlock> layers;
    /// One entry per layer when present.
    std::optional<std::vector<LowRankDelta>> deltas;

    LayeredNet() = default;
    LayeredNet(const LayeredNet& other);
    LayeredNet& operator=(const LayeredNet& other);
    LayeredNet(LayeredNet&&) noexcept = default;
    LayeredNet& operator=(LayeredNet&&) noexcept = default;

    std::size_t n_layers() const { return layers.size(); }
    /// True when some block still computes its modulation from cond.
    bool needs_cond() const;
};

inline constexpr std::size_t kDefaultInDim = 8;
inline constexpr std::size_t kDefaultOutDim = 8;

/// Deterministic random init. Modulation weights start at zero
/// (adaLN-Zero), so a fresh net ignores its conditioning.
LayeredNet init_net(std::size_t n_layers, std::size_t d, std::size_t c, std::uint64_t seed,
                    std::size_t in_dim = kDefaultInDim, std::size_t out_dim = kDefaultOutDim);

/// phi_i(x) for one block, using its delta when given.
Tensor layer_forward(Tape& tape, const LayerBlock& layer, const LowRankDelta* delta,
                     const Tensor& x, const Tensor* cond);

/// Gated residual forward: x_{i+1} = m_i * phi_i(x_i) + (1 - m_i) * x_i.
/// Layers with m_i == 0 are skipped outright unless the mask needs grad.
/// `cond` may be null when no block needs it.
Tensor forward_gated(Tape& tape, const LayeredNet& net, const Tensor& mask, const Tensor& x,
                     const Tensor* cond);

/// forward_gated with every layer on.
Tensor forward(Tape& tape, const LayeredNet& net, const Tensor& x, const Tensor* cond);

/// Hidden states x_0 .. x_N (after in_proj, before out_proj) under a mask,
/// evaluated without recording.
std::vector<Tensor> hidden_states(const LayeredNet& net, const Tensor& mask, const Tensor& x,
                                  const Tensor* cond);

/// Attaches fresh deltas (A random, B zero) to every layer.
void attach_deltas(LayeredNet& net, std::size_t rank, double alpha, std::uint64_t seed);

/// Folds deltas into the base weights and drops them.
LayeredNet merge_deltas(const LayeredNet& net);

/// Keeps only layers with m_i = 1, with deltas merged.
LayeredNet extract_subnetwork(const LayeredNet& net, const PruneMask& mask);

/// Caches (scale, shift) computed from cond in every modulated block.
LayeredNet precache_modulation(const LayeredNet& net, const Tensor& cond);

/// Caches modulation under `cond` (zeros when absent), then removes the
/// conditioning weights and sets c = 0.
LayeredNet strip_conditioning(const LayeredNet& net, std::optional<Tensor> cond = std::nullopt);

std::vector<Tensor> base_parameters(const LayeredNet& net);
std::vector<Tensor> delta_parameters(const LayeredNet& net);
std::size_t parameter_count(const LayeredNet& net);
/// FNV-1a over every parameter's bytes in canonical order.
std::uint64_t parameter_checksum(const LayeredNet& net);

Checkpoint to_checkpoint(const LayeredNet& net);
LayeredNet net_from_checkpoint(const Checkpoint& ckpt);

}  // namespace depthprune
