#include "depthprune/layered_net.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "depthprune/errors.hpp"
#include "depthprune/ops.hpp"
#include "depthprune/rng.hpp"

namespace depthprune {

namespace {

// Calls fn(name, tensor) for every defined tensor of the net in canonical
// order: projections, blocks, modulation, deltas.
template <typename Net, typename Fn>
void visit_tensors(Net& net, Fn&& fn) {
    fn(std::string("in_proj.w"), net.in_w);
    fn(std::string("in_proj.b"), net.in_b);
    fn(std::string("out_proj.w"), net.out_w);
    fn(std::string("out_proj.b"), net.out_b);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        auto& layer = net.layers[i];
        const std::string p = "layer." + std::to_string(i) + ".";
        fn(p + "norm_gain", layer.norm_gain);
        fn(p + "norm_bias", layer.norm_bias);
        fn(p + "w_in", layer.w_in);
        fn(p + "b_in", layer.b_in);
        fn(p + "w_out", layer.w_out);
        fn(p + "b_out", layer.b_out);
        if (layer.modulation) {
            auto& mod = *layer.modulation;
            const std::string m = "mod." + std::to_string(i) + ".";
            if (mod.w_cond.defined()) fn(m + "w_cond", mod.w_cond);
            if (mod.b_cond.defined()) fn(m + "b_cond", mod.b_cond);
            if (mod.cached) {
                fn(m + "cached.scale", mod.cached->scale);
                fn(m + "cached.shift", mod.cached->shift);
            }
        }
    }
    if (net.deltas) {
        for (std::size_t i = 0; i < net.deltas->size(); ++i) {
            auto& delta = (*net.deltas)[i];
            const std::string p = "delta." + std::to_string(i) + ".";
            fn(p + "in.A", delta.w_in.a);
            fn(p + "in.B", delta.w_in.b);
            fn(p + "out.A", delta.w_out.a);
            fn(p + "out.B", delta.w_out.b);
        }
    }
}

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    std::vector<double> values(rows * cols);
    for (double& v : values) v = rng.normal() * stddev;
    return Tensor::matrix(rows, cols, std::move(values));
}

Tensor effective_weight(Tape& tape, const Tensor& base, const LowRankFactors* factors,
                        double factor) {
    if (!factors) return base;
    return ops::add(tape, base, ops::scale(tape, ops::matmul(tape, factors->a, factors->b), factor));
}

void check_cond(const LayeredNet& net, const Tensor& x, const Tensor* cond) {
    if (!net.needs_cond()) return;
    if (!cond || !cond->defined()) {
        throw ContractError("net has live modulation but no conditioning input was given");
    }
    if (cond->rank() != 2 || cond->dim(0) != x.dim(0) || cond->dim(1) != net.c) {
        throw ContractError("conditioning " + shape_str(cond->shape()) + " does not fit batch " +
                            std::to_string(x.dim(0)) + " with width " + std::to_string(net.c));
    }
}

void check_mask(const LayeredNet& net, const Tensor& mask) {
    if (mask.size() != net.n_layers()) {
        throw ContractError("mask length " + std::to_string(mask.size()) + " does not match " +
                            std::to_string(net.n_layers()) + " layers");
    }
    for (double m : mask.data()) {
        if (!(m >= 0.0 && m <= 1.0)) {
            throw ContractError("mask entries must lie in [0, 1], got " + std::to_string(m));
        }
    }
}

void check_input(const LayeredNet& net, const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != net.in_dim) {
        throw ShapeError("input " + shape_str(x.shape()) + " does not match input width " +
                         std::to_string(net.in_dim));
    }
}

const LowRankDelta* delta_for(const LayeredNet& net, std::size_t i) {
    return net.deltas ? &(*net.deltas)[i] : nullptr;
}

// Shared loop behind forward_gated, forward and hidden_states. A null mask
// keeps every layer.
Tensor run(Tape& tape, const LayeredNet& net, const Tensor* mask, const Tensor& x,
           const Tensor* cond, std::vector<Tensor>* trace) {
    check_input(net, x);
    check_cond(net, x, cond);
    Tensor h = ops::add_row(tape, ops::matmul(tape, x, net.in_w), net.in_b);
    if (trace) trace->push_back(h);
    for (std::size_t i = 0; i < net.n_layers(); ++i) {
        const LayerBlock& layer = net.layers[i];
        if (!mask) {
            h = layer_forward(tape, layer, delta_for(net, i), h, cond);
        } else if (!mask->requires_grad() && mask->at(i) == 0.0) {
            // Skipped layer: x_{i+1} = x_i.
        } else if (!mask->requires_grad() && mask->at(i) == 1.0) {
            h = layer_forward(tape, layer, delta_for(net, i), h, cond);
        } else {
            Tensor phi = layer_forward(tape, layer, delta_for(net, i), h, cond);
            h = ops::gated_residual(tape, phi, h, *mask, i);
        }
        if (trace) trace->push_back(h);
    }
    return ops::add_row(tape, ops::matmul(tape, h, net.out_w), net.out_b);
}

}  // namespace

LayeredNet::LayeredNet(const LayeredNet& other)
    : d(other.d),
      c(other.c),
      in_dim(other.in_dim),
      out_dim(other.out_dim),
      layers(other.layers),
      deltas(other.deltas) {
    in_w = other.in_w;
    in_b = other.in_b;
    out_w = other.out_w;
    out_b = other.out_b;
    visit_tensors(*this, [](const std::string&, Tensor& t) { t = t.clone(); });
}

LayeredNet& LayeredNet::operator=(const LayeredNet& other) {
    if (this != &other) {
        LayeredNet copy(other);
        *this = std::move(copy);
    }
    return *this;
}

bool LayeredNet::needs_cond() const {
    for (const auto& layer : layers) {
        if (layer.modulation && layer.modulation->live()) return true;
    }
    return false;
}

LayeredNet init_net(std::size_t n_layers, std::size_t d, std::size_t c, std::uint64_t seed,
                    std::size_t in_dim, std::size_t out_dim) {
    if (n_layers < 1) throw DomainError("init_net: need at least one layer");
    if (d < 2) throw DomainError("init_net: embedding width must be at least 2");
    if (in_dim < 1 || out_dim < 1) throw DomainError("init_net: projection widths must be positive");

    Rng rng(seed);
    LayeredNet net;
    net.d = d;
    net.c = c;
    net.in_dim = in_dim;
    net.out_dim = out_dim;
    const std::size_t hidden = 4 * d;
    net.in_w = random_matrix(rng, in_dim, d, 1.0 / std::sqrt(static_cast<double>(in_dim)));
    net.in_b = Tensor::zeros({d});
    for (std::size_t i = 0; i < n_layers; ++i) {
        LayerBlock layer;
        layer.norm_gain = Tensor::full({d}, 1.0);
        layer.norm_bias = Tensor::zeros({d});
        layer.w_in = random_matrix(rng, d, hidden, 1.0 / std::sqrt(static_cast<double>(d)));
        layer.b_in = Tensor::zeros({hidden});
        layer.w_out = random_matrix(rng, hidden, d, 0.5 / std::sqrt(static_cast<double>(hidden)));
        layer.b_out = Tensor::zeros({d});
        if (c > 0) {
            Modulation mod;
            mod.w_cond = Tensor::zeros({c, 2 * d});
            mod.b_cond = Tensor::zeros({2 * d});
            layer.modulation = std::move(mod);
        }
        net.layers.push_back(std::move(layer));
    }
    net.out_w = random_matrix(rng, d, out_dim, 1.0 / std::sqrt(static_cast<double>(d)));
    net.out_b = Tensor::zeros({out_dim});
    return net;
}

Tensor layer_forward(Tape& tape, const LayerBlock& layer, const LowRankDelta* delta,
                     const Tensor& x, const Tensor* cond) {
    Tensor h = ops::layer_norm(tape, x, layer.norm_gain, layer.norm_bias);
    if (layer.modulation) {
        const Modulation& mod = *layer.modulation;
        if (mod.cached) {
            h = ops::modulate(tape, h, mod.cached->scale, mod.cached->shift);
        } else {
            if (!cond) throw ContractError("modulated layer needs a conditioning input");
            const std::size_t d = layer.norm_gain.size();
            Tensor params = ops::add_row(tape, ops::matmul(tape, *cond, mod.w_cond), mod.b_cond);
            h = ops::modulate(tape, h, ops::slice_cols(tape, params, 0, d),
                              ops::slice_cols(tape, params, d, 2 * d));
        }
    }
    const double factor = delta ? delta->factor() : 1.0;
    Tensor w_in = effective_weight(tape, layer.w_in, delta ? &delta->w_in : nullptr, factor);
    Tensor w_out = effective_weight(tape, layer.w_out, delta ? &delta->w_out : nullptr, factor);
    Tensor u = ops::gelu(tape, ops::add_row(tape, ops::matmul(tape, h, w_in), layer.b_in));
    return ops::add_row(tape, ops::matmul(tape, u, w_out), layer.b_out);
}

Tensor forward_gated(Tape& tape, const LayeredNet& net, const Tensor& mask, const Tensor& x,
                     const Tensor* cond) {
    check_mask(net, mask);
    return run(tape, net, &mask, x, cond, nullptr);
}

Tensor forward(Tape& tape, const LayeredNet& net, const Tensor& x, const Tensor* cond) {
    return run(tape, net, nullptr, x, cond, nullptr);
}

std::vector<Tensor> hidden_states(const LayeredNet& net, const Tensor& mask, const Tensor& x,
                                  const Tensor* cond) {
    check_mask(net, mask);
    Tape tape(false);
    std::vector<Tensor> trace;
    run(tape, net, &mask, x, cond, &trace);
    return trace;
}

void attach_deltas(LayeredNet& net, std::size_t rank, double alpha, std::uint64_t seed) {
    if (rank < 1) throw DomainError("low-rank delta needs rank >= 1");
    Rng rng(seed);
    std::vector<LowRankDelta> deltas;
    for (const LayerBlock& layer : net.layers) {
        LowRankDelta delta;
        delta.rank = rank;
        delta.alpha = alpha;
        const std::size_t rows_in = layer.w_in.dim(0), cols_in = layer.w_in.dim(1);
        const std::size_t rows_out = layer.w_out.dim(0), cols_out = layer.w_out.dim(1);
        delta.w_in.a = random_matrix(rng, rows_in, rank, 1.0 / std::sqrt(static_cast<double>(rows_in)));
        delta.w_in.b = Tensor::zeros({rank, cols_in});
        delta.w_out.a = random_matrix(rng, rows_out, rank, 1.0 / std::sqrt(static_cast<double>(rows_out)));
        delta.w_out.b = Tensor::zeros({rank, cols_out});
        deltas.push_back(std::move(delta));
    }
    net.deltas = std::move(deltas);
}

LayeredNet merge_deltas(const LayeredNet& net) {
    LayeredNet merged(net);
    if (!merged.deltas) return merged;
    Tape tape(false);
    for (std::size_t i = 0; i < merged.n_layers(); ++i) {
        LayerBlock& layer = merged.layers[i];
        const LowRankDelta& delta = (*merged.deltas)[i];
        layer.w_in = effective_weight(tape, layer.w_in.detach(), &delta.w_in, delta.factor());
        layer.w_out = effective_weight(tape, layer.w_out.detach(), &delta.w_out, delta.factor());
    }
    merged.deltas.reset();
    return merged;
}

LayeredNet extract_subnetwork(const LayeredNet& net, const PruneMask& mask) {
    if (mask.size() != net.n_layers()) {
        throw ContractError("mask length " + std::to_string(mask.size()) + " does not match " +
                            std::to_string(net.n_layers()) + " layers");
    }
    LayeredNet merged = merge_deltas(net);
    std::vector<LayerBlock> kept;
    for (std::size_t i = 0; i < merged.n_layers(); ++i) {
        if (mask[i]) kept.push_back(std::move(merged.layers[i]));
    }
    merged.layers = std::move(kept);
    return merged;
}

LayeredNet precache_modulation(const LayeredNet& net, const Tensor& cond) {
    if (cond.size() != net.c) {
        throw ContractError("conditioning length " + std::to_string(cond.size()) +
                            " does not match width " + std::to_string(net.c));
    }
    LayeredNet out(net);
    if (net.c == 0) return out;
    Tape tape(false);
    const Tensor row = ops::reshape(tape, cond.detach(), {1, net.c});
    for (LayerBlock& layer : out.layers) {
        if (!layer.modulation || !layer.modulation->w_cond.defined()) continue;
        Modulation& mod = *layer.modulation;
        const std::size_t d = layer.norm_gain.size();
        // Same op sequence as the uncached path in layer_forward, so the
        // cached values carry identical bits.
        Tensor params = ops::add_row(tape, ops::matmul(tape, row, mod.w_cond), mod.b_cond);
        mod.cached = Modulation::Cache{
            ops::reshape(tape, ops::slice_cols(tape, params, 0, d), {d}),
            ops::reshape(tape, ops::slice_cols(tape, params, d, 2 * d), {d}),
        };
    }
    return out;
}

LayeredNet strip_conditioning(const LayeredNet& net, std::optional<Tensor> cond) {
    if (net.c == 0) return LayeredNet(net);
    LayeredNet out = precache_modulation(net, cond ? *cond : Tensor::zeros({net.c}));
    for (LayerBlock& layer : out.layers) {
        if (!layer.modulation) continue;
        layer.modulation->w_cond = Tensor();
        layer.modulation->b_cond = Tensor();
    }
    out.c = 0;
    return out;
}

std::vector<Tensor> base_parameters(const LayeredNet& net) {
    std::vector<Tensor> params;
    visit_tensors(net, [&](const std::string& name, const Tensor& t) {
        if (!name.starts_with("delta.")) params.push_back(t);
    });
    return params;
}

std::vector<Tensor> delta_parameters(const LayeredNet& net) {
    std::vector<Tensor> params;
    visit_tensors(net, [&](const std::string& name, const Tensor& t) {
        if (name.starts_with("delta.")) params.push_back(t);
    });
    return params;
}

std::size_t parameter_count(const LayeredNet& net) {
    std::size_t total = 0;
    visit_tensors(net, [&](const std::string&, const Tensor& t) { total += t.size(); });
    return total;
}

std::uint64_t parameter_checksum(const LayeredNet& net) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    auto mix = [&hash](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            hash ^= (v >> (8 * b)) & 0xFF;
            hash *= 0x100000001b3ULL;
        }
    };
    visit_tensors(net, [&](const std::string&, const Tensor& t) {
        mix(t.size());
        for (double v : t.data()) mix(std::bit_cast<std::uint64_t>(v));
    });
    return hash;
}

Checkpoint to_checkpoint(const LayeredNet& net) {
    Checkpoint ckpt;
    ckpt.add("net.dims", Tensor::vector({static_cast<double>(net.n_layers()), static_cast<double>(net.d),
                                         static_cast<double>(net.c), static_cast<double>(net.in_dim),
                                         static_cast<double>(net.out_dim)}));
    visit_tensors(net, [&](const std::string& name, const Tensor& t) { ckpt.add(name, t.detach()); });
    if (net.deltas && !net.deltas->empty()) {
        const auto& first = net.deltas->front();
        ckpt.add("delta.meta", Tensor::vector({static_cast<double>(first.rank), first.alpha}));
    }
    return ckpt;
}

LayeredNet net_from_checkpoint(const Checkpoint& ckpt) {
    const Tensor& dims = ckpt.get("net.dims");
    if (dims.size() != 5) throw CheckpointError("net.dims must hold 5 values");
    const auto n_layers = static_cast<std::size_t>(dims.at(0));
    LayeredNet net;
    net.d = static_cast<std::size_t>(dims.at(1));
    net.c = static_cast<std::size_t>(dims.at(2));
    net.in_dim = static_cast<std::size_t>(dims.at(3));
    net.out_dim = static_cast<std::size_t>(dims.at(4));
    net.in_w = ckpt.get("in_proj.w").clone();
    net.in_b = ckpt.get("in_proj.b").clone();
    net.out_w = ckpt.get("out_proj.w").clone();
    net.out_b = ckpt.get("out_proj.b").clone();
    for (std::size_t i = 0; i < n_layers; ++i) {
        const std::string p = "layer." + std::to_string(i) + ".";
        LayerBlock layer;
        layer.norm_gain = ckpt.get(p + "norm_gain").clone();
        layer.norm_bias = ckpt.get(p + "norm_bias").clone();
        layer.w_in = ckpt.get(p + "w_in").clone();
        layer.b_in = ckpt.get(p + "b_in").clone();
        layer.w_out = ckpt.get(p + "w_out").clone();
        layer.b_out = ckpt.get(p + "b_out").clone();
        const std::string m = "mod." + std::to_string(i) + ".";
        auto w_cond = ckpt.find(m + "w_cond");
        auto scale = ckpt.find(m + "cached.scale");
        if (w_cond || scale) {
            Modulation mod;
            if (w_cond) {
                mod.w_cond = w_cond->clone();
                mod.b_cond = ckpt.get(m + "b_cond").clone();
            }
            if (scale) {
                mod.cached = Modulation::Cache{scale->clone(), ckpt.get(m + "cached.shift").clone()};
            }
            layer.modulation = std::move(mod);
        }
        net.layers.push_back(std::move(layer));
    }
    if (ckpt.contains("delta.meta")) {
        const Tensor& meta = ckpt.get("delta.meta");
        std::vector<LowRankDelta> deltas;
        for (std::size_t i = 0; i < n_layers; ++i) {
            const std::string p = "delta." + std::to_string(i) + ".";
            LowRankDelta delta;
            delta.rank = static_cast<std::size_t>(meta.at(0));
            delta.alpha = meta.at(1);
            delta.w_in = {ckpt.get(p + "in.A").clone(), ckpt.get(p + "in.B").clone()};
            delta.w_out = {ckpt.get(p + "out.A").clone(), ckpt.get(p + "out.B").clone()};
            deltas.push_back(std::move(delta));
        }
        net.deltas = std::move(deltas);
    }
    return net;
}

}  // namespace depthprune
