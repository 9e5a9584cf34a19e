#include "depthprune/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "depthprune/gradcheck.hpp"
#include "depthprune/gumbel.hpp"
#include "depthprune/layered_net.hpp"
#include "depthprune/mask_learning.hpp"
#include "depthprune/mask_space.hpp"
#include "depthprune/ops.hpp"
#include "depthprune/rng.hpp"

namespace depthprune {

namespace {

using Op = std::function<Tensor(Tape&, const Tensor&)>;

struct Probe {
    Tensor x;
    ScalarFn f;
    ScalarFn analytic;  ///< empty: use f
};

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

// Entries in [lo, hi] at least `gap` away from every point of `avoid`.
Tensor away_from(Rng& rng, Shape shape, double lo, double hi, std::vector<double> avoid, double gap) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) {
        do {
            v = rng.uniform(lo, hi);
        } while (std::any_of(avoid.begin(), avoid.end(), [&](double a) { return std::abs(v - a) < gap; }));
    }
    return t;
}

// sum(w * op(x)) with a fixed random w shaped like op's output.
ScalarFn weigh(Rng& rng, const Tensor& x, Op op) {
    Tape no_grad(false);
    Tensor w = Tensor::zeros(op(no_grad, x).shape());
    for (double& v : w.mutable_data()) v = rng.normal();
    return [op = std::move(op), w](Tape& tape, const Tensor& in) {
        return ops::sum(tape, ops::mul(tape, op(tape, in), w));
    };
}

Probe plain(Rng& rng, Tensor x, Op op) {
    ScalarFn f = weigh(rng, x, std::move(op));
    return {std::move(x), std::move(f), {}};
}

LayeredNet random_net(Rng& rng, std::size_t n, std::size_t d, std::size_t c) {
    LayeredNet net = init_net(n, d, c, rng.next_u64(), 3, 2);
    for (Tensor& p : base_parameters(net)) {
        for (double& v : p.mutable_data()) v = 0.5 * rng.normal();
    }
    attach_deltas(net, 2, 2.0, rng.next_u64());
    for (Tensor& p : delta_parameters(net)) {
        for (double& v : p.mutable_data()) v = 0.3 * rng.normal();
    }
    return net;
}

using Maker = std::function<Probe(Rng&)>;

std::vector<std::pair<std::string, Maker>> cases() {
    std::vector<std::pair<std::string, Maker>> c;
    c.emplace_back("matmul.a", [](Rng& r) {
        Tensor b = random_tensor(r, {4, 2});
        return plain(r, random_tensor(r, {3, 4}), [b](Tape& t, const Tensor& a) { return ops::matmul(t, a, b); });
    });
    c.emplace_back("matmul.b", [](Rng& r) {
        Tensor a = random_tensor(r, {3, 4});
        return plain(r, random_tensor(r, {4, 2}), [a](Tape& t, const Tensor& b) { return ops::matmul(t, a, b); });
    });
    c.emplace_back("add", [](Rng& r) {
        Tensor b = random_tensor(r, {2, 3});
        return plain(r, random_tensor(r, {2, 3}), [b](Tape& t, const Tensor& a) { return ops::add(t, a, b); });
    });
    c.emplace_back("sub", [](Rng& r) {
        Tensor a = random_tensor(r, {2, 3});
        return plain(r, random_tensor(r, {2, 3}), [a](Tape& t, const Tensor& b) { return ops::sub(t, a, b); });
    });
    c.emplace_back("mul", [](Rng& r) {
        Tensor b = random_tensor(r, {2, 3});
        return plain(r, random_tensor(r, {2, 3}), [b](Tape& t, const Tensor& a) { return ops::mul(t, a, b); });
    });
    c.emplace_back("mul.fan_out", [](Rng& r) {
        return plain(r, random_tensor(r, {5}), [](Tape& t, const Tensor& a) { return ops::mul(t, a, a); });
    });
    c.emplace_back("scale", [](Rng& r) {
        return plain(r, random_tensor(r, {4}), [](Tape& t, const Tensor& a) { return ops::scale(t, a, -1.7); });
    });
    c.emplace_back("add_row.x", [](Rng& r) {
        Tensor b = random_tensor(r, {3});
        return plain(r, random_tensor(r, {2, 3}), [b](Tape& t, const Tensor& x) { return ops::add_row(t, x, b); });
    });
    c.emplace_back("add_row.bias", [](Rng& r) {
        Tensor x = random_tensor(r, {2, 3});
        return plain(r, random_tensor(r, {3}), [x](Tape& t, const Tensor& b) { return ops::add_row(t, x, b); });
    });
    c.emplace_back("layer_norm.x", [](Rng& r) {
        Tensor g = random_tensor(r, {4}), b = random_tensor(r, {4});
        return plain(r, random_tensor(r, {2, 4}), [g, b](Tape& t, const Tensor& x) { return ops::layer_norm(t, x, g, b); });
    });
    c.emplace_back("layer_norm.gain", [](Rng& r) {
        Tensor x = random_tensor(r, {2, 4}), b = random_tensor(r, {4});
        return plain(r, random_tensor(r, {4}), [x, b](Tape& t, const Tensor& g) { return ops::layer_norm(t, x, g, b); });
    });
    c.emplace_back("layer_norm.bias", [](Rng& r) {
        Tensor x = random_tensor(r, {2, 4}), g = random_tensor(r, {4});
        return plain(r, random_tensor(r, {4}), [x, g](Tape& t, const Tensor& b) { return ops::layer_norm(t, x, g, b); });
    });
    c.emplace_back("gelu", [](Rng& r) {
        return plain(r, random_tensor(r, {2, 3}, -3.0, 3.0), [](Tape& t, const Tensor& x) { return ops::gelu(t, x); });
    });
    c.emplace_back("layer_norm_gelu", [](Rng& r) {
        Tensor g = Tensor::full({3}, 1.0), b = Tensor::zeros({3});
        return plain(r, random_tensor(r, {2, 3}), [g, b](Tape& t, const Tensor& x) {
            return ops::gelu(t, ops::layer_norm(t, x, g, b));
        });
    });
    c.emplace_back("softmax_temperature", [](Rng& r) {
        const double tau = r.uniform(0.3, 2.0);
        return plain(r, random_tensor(r, {5}, -2.0, 2.0),
                     [tau](Tape& t, const Tensor& x) { return ops::softmax_temperature(t, x, tau); });
    });
    c.emplace_back("clamp01", [](Rng& r) {
        return plain(r, away_from(r, {6}, -1.0, 2.0, {0.0, 1.0}, 1e-3),
                     [](Tape& t, const Tensor& x) { return ops::clamp01(t, x); });
    });
    c.emplace_back("sum", [](Rng& r) {
        return plain(r, random_tensor(r, {2, 3}), [](Tape& t, const Tensor& x) { return ops::sum(t, x); });
    });
    c.emplace_back("mean", [](Rng& r) {
        return plain(r, random_tensor(r, {2, 3}), [](Tape& t, const Tensor& x) { return ops::mean(t, x); });
    });
    c.emplace_back("mse", [](Rng& r) {
        Tensor b = random_tensor(r, {2, 3});
        return plain(r, random_tensor(r, {2, 3}), [b](Tape& t, const Tensor& a) { return ops::mse(t, a, b); });
    });
    c.emplace_back("l1", [](Rng& r) {
        Tensor b = Tensor::zeros({2, 3});
        return plain(r, away_from(r, {2, 3}, -1.0, 1.0, {0.0}, 1e-3),
                     [b](Tape& t, const Tensor& a) { return ops::l1(t, a, b); });
    });
    c.emplace_back("gated_residual.mask", [](Rng& r) {
        Tensor phi = random_tensor(r, {2, 3}), x = random_tensor(r, {2, 3});
        return plain(r, random_tensor(r, {3}, 0.05, 0.95),
                     [phi, x](Tape& t, const Tensor& m) { return ops::gated_residual(t, phi, x, m, 1); });
    });
    c.emplace_back("gated_residual.phi", [](Rng& r) {
        Tensor x = random_tensor(r, {2, 3}), m = random_tensor(r, {3}, 0.0, 1.0);
        return plain(r, random_tensor(r, {2, 3}),
                     [x, m](Tape& t, const Tensor& phi) { return ops::gated_residual(t, phi, x, m, 2); });
    });
    c.emplace_back("gated_residual.x", [](Rng& r) {
        Tensor phi = random_tensor(r, {2, 3}), m = random_tensor(r, {3}, 0.0, 1.0);
        return plain(r, random_tensor(r, {2, 3}),
                     [phi, m](Tape& t, const Tensor& x) { return ops::gated_residual(t, phi, x, m, 0); });
    });
    c.emplace_back("modulate.h", [](Rng& r) {
        Tensor s = random_tensor(r, {3}), sh = random_tensor(r, {3});
        return plain(r, random_tensor(r, {2, 3}), [s, sh](Tape& t, const Tensor& h) { return ops::modulate(t, h, s, sh); });
    });
    c.emplace_back("modulate.scale", [](Rng& r) {
        Tensor h = random_tensor(r, {2, 3}), sh = random_tensor(r, {2, 3});
        return plain(r, random_tensor(r, {2, 3}), [h, sh](Tape& t, const Tensor& s) { return ops::modulate(t, h, s, sh); });
    });
    c.emplace_back("modulate.shift", [](Rng& r) {
        Tensor h = random_tensor(r, {2, 3}), s = random_tensor(r, {3});
        return plain(r, random_tensor(r, {3}), [h, s](Tape& t, const Tensor& sh) { return ops::modulate(t, h, s, sh); });
    });
    c.emplace_back("slice_cols", [](Rng& r) {
        return plain(r, random_tensor(r, {2, 5}), [](Tape& t, const Tensor& x) { return ops::slice_cols(t, x, 1, 4); });
    });
    c.emplace_back("concat", [](Rng& r) {
        Tensor other = random_tensor(r, {2});
        return plain(r, random_tensor(r, {2, 2}), [other](Tape& t, const Tensor& x) {
            return ops::concat(t, {other, x, x});
        });
    });
    c.emplace_back("stack", [](Rng& r) {
        Tensor other = random_tensor(r, {3});
        return plain(r, random_tensor(r, {3}), [other](Tape& t, const Tensor& x) { return ops::stack(t, {x, other, x}); });
    });
    c.emplace_back("reshape", [](Rng& r) {
        return plain(r, random_tensor(r, {2, 3}), [](Tape& t, const Tensor& x) { return ops::reshape(t, x, {3, 2}); });
    });
    c.emplace_back("vecmat.w", [](Rng& r) {
        Tensor m = random_tensor(r, {3, 4});
        return plain(r, random_tensor(r, {3}), [m](Tape& t, const Tensor& w) { return ops::vecmat(t, w, m); });
    });
    c.emplace_back("vecmat.m", [](Rng& r) {
        Tensor w = random_tensor(r, {3});
        return plain(r, random_tensor(r, {3, 4}), [w](Tape& t, const Tensor& m) { return ops::vecmat(t, w, m); });
    });
    c.emplace_back("pruning_loss", [](Rng& r) {
        Tensor teacher = random_tensor(r, {2, 3}), target = random_tensor(r, {2, 3});
        TrainConfig cfg;
        cfg.lambda_task = r.uniform(0.5, 2.0);
        cfg.lambda_distill = r.uniform(0.5, 2.0);
        Tensor x = teacher.clone();
        for (double& v : x.mutable_data()) v += (r.uniform() < 0.5 ? -1.0 : 1.0) * r.uniform(0.01, 1.0);
        return plain(r, x, [teacher, target, cfg](Tape& t, const Tensor& s) {
            return pruning_loss(t, s, teacher, target, cfg);
        });
    });
    c.emplace_back("layer_forward.x", [](Rng& r) {
        auto net = std::make_shared<LayeredNet>(random_net(r, 1, 3, 2));
        Tensor cond = random_tensor(r, {2, 2});
        return plain(r, random_tensor(r, {2, 3}), [net, cond](Tape& t, const Tensor& x) {
            return layer_forward(t, net->layers[0], &(*net->deltas)[0], x, &cond);
        });
    });
    c.emplace_back("forward_gated.mask", [](Rng& r) {
        auto net = std::make_shared<LayeredNet>(random_net(r, 3, 3, 2));
        Tensor x = random_tensor(r, {2, 3}), cond = random_tensor(r, {2, 2});
        return plain(r, random_tensor(r, {3}, 0.05, 0.95), [net, x, cond](Tape& t, const Tensor& m) {
            return forward_gated(t, *net, m, x, &cond);
        });
    });
    c.emplace_back("forward_gated.x", [](Rng& r) {
        auto net = std::make_shared<LayeredNet>(random_net(r, 3, 3, 2));
        Tensor m = random_tensor(r, {3}, 0.0, 1.0), cond = random_tensor(r, {2, 2});
        return plain(r, random_tensor(r, {2, 3}), [net, m, cond](Tape& t, const Tensor& x) {
            return forward_gated(t, *net, m, x, &cond);
        });
    });
    c.emplace_back("forward_gated.cond", [](Rng& r) {
        auto net = std::make_shared<LayeredNet>(random_net(r, 2, 3, 2));
        Tensor m = random_tensor(r, {2}, 0.0, 1.0), x = random_tensor(r, {2, 3});
        return plain(r, random_tensor(r, {2, 2}), [net, m, x](Tape& t, const Tensor& cond) {
            return forward_gated(t, *net, m, x, &cond);
        });
    });
    c.emplace_back("gumbel_softmax.logits", [](Rng& r) {
        const double tau = r.uniform(0.5, 2.0);
        Tensor noise = sample_gumbel(6, r);
        return plain(r, random_tensor(r, {6}, -2.0, 2.0), [noise, tau](Tape& t, const Tensor& l) {
            return gumbel_softmax_with_noise(t, {l, tau}, noise);
        });
    });
    // The straight-through estimator's gradient is that of the soft sample,
    // so the differences are taken on the relaxed path.
    c.emplace_back("straight_through.logits", [](Rng& r) {
        const BlockPartition part{4, 4, 2};
        auto table = std::make_shared<OptionTable>(part);
        const double tau = r.uniform(0.5, 2.0);
        Tensor noise = sample_gumbel(table->size(), r);
        Tensor w = Tensor::zeros({4});
        for (double& v : w.mutable_data()) v = r.normal();
        auto mask = [table, noise, tau, w](bool hard) {
            return [=](Tape& t, const Tensor& l) {
                Tensor soft = gumbel_softmax_with_noise(t, {l, tau}, noise);
                Tensor weights = hard ? ops::straight_through(t, soft) : soft;
                return ops::sum(t, ops::mul(t, ops::vecmat(t, weights, table->matrix()), w));
            };
        };
        return Probe{random_tensor(r, {table->size()}, -2.0, 2.0), mask(false), mask(true)};
    });
    return c;
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed, std::size_t trials) {
    std::vector<GradcheckCase> results;
    std::uint64_t index = 0;
    for (const auto& [name, make] : cases()) {
        Rng rng = Rng::substream(seed, index++);
        GradcheckCase result{name, 0.0};
        for (std::size_t trial = 0; trial < trials; ++trial) {
            const Probe p = make(rng);
            const double err = p.analytic ? finite_diff_check(p.analytic, p.f, p.x)
                                          : finite_diff_check(p.f, p.x);
            result.max_error = std::max(result.max_error, err);
        }
        results.push_back(std::move(result));
    }
    return results;
}

}  // namespace depthprune
