#include "depthprune/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "depthprune/errors.hpp"
#include "depthprune/kernels.hpp"

namespace depthprune::ops {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

// Accumulates into the gradient of t only when t participates in autodiff.
template <typename Fn>
void accumulate(Tensor t, Fn&& fn) {
    if (!t.requires_grad()) return;
    fn(t.mutable_grad());
}

Tensor empty_like_shape(const Shape& shape) { return Tensor::zeros(shape); }

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
    }
    const std::size_t r = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = empty_like_shape({r, n});
    kernels::matmul(a.data(), b.data(), out.mutable_data(), r, k, n);
    tape.record({a, b}, out, [a, b, r, k, n](std::span<const double> g) {
        accumulate(a, [&](std::span<double> ga) { kernels::matmul_grad_a(g, b.data(), ga, r, k, n); });
        accumulate(b, [&](std::span<double> gb) { kernels::matmul_grad_b(a.data(), g, gb, r, k, n); });
    });
    return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tensor out = empty_like_shape(a.shape());
    auto o = out.mutable_data();
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    tape.record({a, b}, out, [a, b](std::span<const double> g) {
        for (const Tensor& t : {a, b}) {
            accumulate(t, [&](std::span<double> gt) {
                for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
            });
        }
    });
    return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Tensor out = empty_like_shape(a.shape());
    auto o = out.mutable_data();
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
    tape.record({a, b}, out, [a, b](std::span<const double> g) {
        accumulate(a, [&](std::span<double> ga) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
        accumulate(b, [&](std::span<double> gb) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        });
    });
    return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tensor out = empty_like_shape(a.shape());
    auto o = out.mutable_data();
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
    tape.record({a, b}, out, [a, b](std::span<const double> g) {
        accumulate(a, [&](std::span<double> ga) {
            auto bv = b.data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        });
        accumulate(b, [&](std::span<double> gb) {
            auto av = a.data();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        });
    });
    return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
    Tensor out = empty_like_shape(a.shape());
    auto o = out.mutable_data();
    auto av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * factor;
    tape.record({a}, out, [a, factor](std::span<const double> g) {
        accumulate(a, [&](std::span<double> ga) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
        });
    });
    return out;
}

Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias) {
    require_rank("add_row", x, 2);
    if (bias.size() != x.dim(1)) {
        throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " does not fit " +
                         shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor out = empty_like_shape(x.shape());
    auto o = out.mutable_data();
    auto xv = x.data(), bv = bias.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) o[i * d + j] = xv[i * d + j] + bv[j];
    tape.record({x, bias}, out, [x, bias, n, d](std::span<const double> g) {
        accumulate(x, [&](std::span<double> gx) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
        accumulate(bias, [&](std::span<double> gb) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        });
    });
    return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
    require_rank("layer_norm", x, 2);
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (d == 0) throw ShapeError("layer_norm: feature dimension must be at least 1");
    if (gain.size() != d || bias.size() != d) {
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not fit " + shape_str(x.shape()));
    }
    if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");

    auto xhat = std::make_shared<std::vector<double>>(n * d);
    auto inv_std = std::make_shared<std::vector<double>>(n);
    kernels::layer_norm_rows(x.data(), *xhat, *inv_std, n, d, eps);

    Tensor out = empty_like_shape(x.shape());
    auto o = out.mutable_data();
    auto gv = gain.data(), bv = bias.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) o[i * d + j] = (*xhat)[i * d + j] * gv[j] + bv[j];

    tape.record({x, gain, bias}, out, [x, gain, bias, xhat, inv_std, n, d](std::span<const double> g) {
        auto gv = gain.data();
        accumulate(x, [&](std::span<double> gx) {
            std::vector<double> dxhat(d);
            for (std::size_t i = 0; i < n; ++i) {
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dxhat[j] = g[i * d + j] * gv[j];
                    mean_dxhat += dxhat[j];
                    mean_dxhat_xhat += dxhat[j] * (*xhat)[i * d + j];
                }
                mean_dxhat /= static_cast<double>(d);
                mean_dxhat_xhat /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    gx[i * d + j] += (*inv_std)[i] *
                                     (dxhat[j] - mean_dxhat - (*xhat)[i * d + j] * mean_dxhat_xhat);
                }
            }
        });
        accumulate(gain, [&](std::span<double> gg) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * (*xhat)[i * d + j];
        });
        accumulate(bias, [&](std::span<double> gb) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        });
    });
    return out;
}

namespace {
constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu_value(double x) {
    return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluCoeff * x * x * x)));
}

Tensor gelu(Tape& tape, const Tensor& x) {
    Tensor out = empty_like_shape(x.shape());
    auto o = out.mutable_data();
    auto xv = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = gelu_value(xv[i]);
    tape.record({x}, out, [x](std::span<const double> g) {
        accumulate(x, [&](std::span<double> gx) {
            auto xv = x.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = xv[i];
                const double inner = kSqrt2OverPi * (v + kGeluCoeff * v * v * v);
                const double t = std::tanh(inner);
                const double dinner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * v * v);
                gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner);
            }
        });
    });
    return out;
}

Tensor softmax_temperature(Tape& tape, const Tensor& logits, double tau) {
    if (!(tau > 0.0)) throw DomainError("softmax_temperature: tau must be positive");
    require_rank("softmax_temperature", logits, 1);
    const std::size_t n = logits.size();
    auto lv = logits.data();
    const double peak = *std::max_element(lv.begin(), lv.end());
    Tensor out = empty_like_shape(logits.shape());
    auto o = out.mutable_data();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        o[i] = std::exp((lv[i] - peak) / tau);
        total += o[i];
    }
    for (std::size_t i = 0; i < n; ++i) o[i] /= total;
    tape.record({logits}, out, [logits, out, tau](std::span<const double> g) {
        accumulate(logits, [&](std::span<double> gl) {
            auto y = out.data();
            double dot = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
            for (std::size_t i = 0; i < g.size(); ++i) gl[i] += y[i] * (g[i] - dot) / tau;
        });
    });
    return out;
}

Tensor clamp01(Tape& tape, const Tensor& x) {
    Tensor out = empty_like_shape(x.shape());
    auto o = out.mutable_data();
    auto xv = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::min(std::max(xv[i], 0.0), 1.0);
    tape.record({x}, out, [x](std::span<const double> g) {
        accumulate(x, [&](std::span<double> gx) {
            auto xv = x.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xv[i] >= 0.0 && xv[i] <= 1.0) gx[i] += g[i];
            }
        });
    });
    return out;
}

Tensor straight_through(Tape& tape, const Tensor& soft) {
    require_rank("straight_through", soft, 1);
    auto sv = soft.data();
    // max_element returns the first maximum, which is the tie rule.
    const auto winner = static_cast<std::size_t>(std::max_element(sv.begin(), sv.end()) - sv.begin());
    Tensor out = empty_like_shape(soft.shape());
    out.mutable_data()[winner] = 1.0;
    tape.record({soft}, out, [soft](std::span<const double> g) {
        accumulate(soft, [&](std::span<double> gs) {
            for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        });
    });
    return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    Tensor out = Tensor::scalar(total);
    tape.record({x}, out, [x](std::span<const double> g) {
        accumulate(x, [&](std::span<double> gx) {
            for (double& v : gx) v += g[0];
        });
    });
    return out;
}

Tensor mean(Tape& tape, const Tensor& x) {
    const double n = static_cast<double>(x.size());
    double total = 0.0;
    for (double v : x.data()) total += v;
    Tensor out = Tensor::scalar(total / n);
    tape.record({x}, out, [x, n](std::span<const double> g) {
        accumulate(x, [&](std::span<double> gx) {
            for (double& v : gx) v += g[0] / n;
        });
    });
    return out;
}

Tensor mse(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape("mse", a, b);
    const double n = static_cast<double>(a.size());
    auto av = a.data(), bv = b.data();
    double total = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double diff = av[i] - bv[i];
        total += diff * diff;
    }
    Tensor out = Tensor::scalar(total / n);
    tape.record({a, b}, out, [a, b, n](std::span<const double> g) {
        auto av = a.data(), bv = b.data();
        const double c = 2.0 * g[0] / n;
        accumulate(a, [&](std::span<double> ga) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * (av[i] - bv[i]);
        });
        accumulate(b, [&](std::span<double> gb) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= c * (av[i] - bv[i]);
        });
    });
    return out;
}

Tensor l1(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape("l1", a, b);
    const double n = static_cast<double>(a.size());
    auto av = a.data(), bv = b.data();
    double total = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) total += std::abs(av[i] - bv[i]);
    Tensor out = Tensor::scalar(total / n);
    tape.record({a, b}, out, [a, b, n](std::span<const double> g) {
        auto av = a.data(), bv = b.data();
        auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
        const double c = g[0] / n;
        accumulate(a, [&](std::span<double> ga) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * sign(av[i] - bv[i]);
        });
        accumulate(b, [&](std::span<double> gb) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= c * sign(av[i] - bv[i]);
        });
    });
    return out;
}

Tensor gated_residual(Tape& tape, const Tensor& phi, const Tensor& x, const Tensor& mask,
                      std::size_t index) {
    require_same_shape("gated_residual", phi, x);
    if (index >= mask.size()) {
        throw ContractError("gated_residual: layer " + std::to_string(index) +
                            " outside mask of length " + std::to_string(mask.size()));
    }
    const double m = mask.at(index);
    const double keep = 1.0 - m;
    Tensor out = empty_like_shape(x.shape());
    auto o = out.mutable_data();
    auto pv = phi.data(), xv = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = m * pv[i] + keep * xv[i];
    tape.record({phi, x, mask}, out, [phi, x, mask, index, m, keep](std::span<const double> g) {
        accumulate(phi, [&](std::span<double> gp) {
            for (std::size_t i = 0; i < g.size(); ++i) gp[i] += m * g[i];
        });
        accumulate(x, [&](std::span<double> gx) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += keep * g[i];
        });
        accumulate(mask, [&](std::span<double> gm) {
            auto pv = phi.data(), xv = x.data();
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (pv[i] - xv[i]);
            gm[index] += acc;
        });
    });
    return out;
}

Tensor modulate(Tape& tape, const Tensor& h, const Tensor& scale, const Tensor& shift) {
    require_rank("modulate", h, 2);
    const std::size_t n = h.dim(0), d = h.dim(1);
    const bool row_broadcast = scale.size() == d;
    if (!(row_broadcast || scale.shape() == h.shape()) || scale.size() != shift.size()) {
        throw ShapeError("modulate: scale/shift " + shape_str(scale.shape()) + "/" +
                         shape_str(shift.shape()) + " do not fit " + shape_str(h.shape()));
    }
    auto param_index = [row_broadcast, d](std::size_t flat) {
        return row_broadcast ? flat % d : flat;
    };
    Tensor out = empty_like_shape(h.shape());
    auto o = out.mutable_data();
    auto hv = h.data(), sv = scale.data(), tv = shift.data();
    for (std::size_t i = 0; i < n * d; ++i) {
        const std::size_t p = param_index(i);
        o[i] = hv[i] * (1.0 + sv[p]) + tv[p];
    }
    tape.record({h, scale, shift}, out, [h, scale, shift, param_index](std::span<const double> g) {
        auto hv = h.data(), sv = scale.data();
        accumulate(h, [&](std::span<double> gh) {
            for (std::size_t i = 0; i < g.size(); ++i) gh[i] += g[i] * (1.0 + sv[param_index(i)]);
        });
        accumulate(scale, [&](std::span<double> gs) {
            for (std::size_t i = 0; i < g.size(); ++i) gs[param_index(i)] += g[i] * hv[i];
        });
        accumulate(shift, [&](std::span<double> gt) {
            for (std::size_t i = 0; i < g.size(); ++i) gt[param_index(i)] += g[i];
        });
    });
    return out;
}

Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank("slice_cols", x, 2);
    const std::size_t n = x.dim(0), m = x.dim(1);
    if (begin >= end || end > m) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for " + shape_str(x.shape()));
    }
    const std::size_t w = end - begin;
    Tensor out = empty_like_shape({n, w});
    auto o = out.mutable_data();
    auto xv = x.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) o[i * w + j] = xv[i * m + begin + j];
    tape.record({x}, out, [x, n, m, w, begin](std::span<const double> g) {
        accumulate(x, [&](std::span<double> gx) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < w; ++j) gx[i * m + begin + j] += g[i * w + j];
        });
    });
    return out;
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    std::vector<double> values;
    for (const Tensor& p : parts) values.insert(values.end(), p.data().begin(), p.data().end());
    Tensor out = Tensor::vector(std::move(values));
    tape.record(parts, out, [parts](std::span<const double> g) {
        std::size_t offset = 0;
        for (const Tensor& p : parts) {
            const std::size_t len = p.size();
            accumulate(p, [&](std::span<double> gp) {
                for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
            });
            offset += len;
        }
    });
    return out;
}

Tensor stack(Tape& tape, const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ShapeError("stack: no inputs");
    const std::size_t len = rows.front().size();
    std::vector<double> values;
    values.reserve(rows.size() * len);
    for (const Tensor& r : rows) {
        if (r.size() != len) {
            throw ShapeError("stack: row " + shape_str(r.shape()) + " differs from " +
                             shape_str(rows.front().shape()));
        }
        values.insert(values.end(), r.data().begin(), r.data().end());
    }
    Tensor out = Tensor::matrix(rows.size(), len, std::move(values));
    tape.record(rows, out, [rows, len](std::span<const double> g) {
        for (std::size_t r = 0; r < rows.size(); ++r) {
            accumulate(rows[r], [&](std::span<double> gr) {
                for (std::size_t i = 0; i < len; ++i) gr[i] += g[r * len + i];
            });
        }
    });
    return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> values(x.data().begin(), x.data().end());
    Tensor out(std::move(shape), std::move(values));
    tape.record({x}, out, [x](std::span<const double> g) {
        accumulate(x, [&](std::span<double> gx) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    });
    return out;
}

Tensor vecmat(Tape& tape, const Tensor& w, const Tensor& m) {
    require_rank("vecmat", w, 1);
    require_rank("vecmat", m, 2);
    if (m.dim(0) != w.size()) {
        throw ShapeError("vecmat: cannot multiply " + shape_str(w.shape()) + " by " +
                         shape_str(m.shape()));
    }
    const std::size_t n = m.dim(0), len = m.dim(1);
    Tensor out = empty_like_shape({len});
    auto o = out.mutable_data();
    auto wv = w.data(), mv = m.data();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < len; ++j) o[j] += wv[r] * mv[r * len + j];
    tape.record({w, m}, out, [w, m, n, len](std::span<const double> g) {
        auto wv = w.data(), mv = m.data();
        accumulate(w, [&](std::span<double> gw) {
            for (std::size_t r = 0; r < n; ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < len; ++j) acc += g[j] * mv[r * len + j];
                gw[r] += acc;
            }
        });
        accumulate(m, [&](std::span<double> gm) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < len; ++j) gm[r * len + j] += wv[r] * g[j];
        });
    });
    return out;
}

}  // namespace depthprune::ops
