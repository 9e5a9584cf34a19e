#include "depthprune/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "depthprune/errors.hpp"

namespace depthprune {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
    Tape tape(false);
    Tensor out = f(tape, x.detach());
    if (out.size() != 1) throw ContractError("finite_diff_check: f must return a scalar");
    return out.item();
}

}  // namespace

double finite_diff_check(const ScalarFn& f, const Tensor& x, double step) {
    return finite_diff_check(f, f, x, step);
}

double finite_diff_check(const ScalarFn& analytic_fn, const ScalarFn& f, const Tensor& x,
                         double step) {
    if (!(step > 0.0)) throw DomainError("finite_diff_check: step must be positive");

    const double first = evaluate(f, x);
    const double second = evaluate(f, x);
    if (first != second) {
        throw ContractError("finite_diff_check: f is not deterministic at the probe point");
    }

    Tape tape;
    Tensor probe = x.detach();
    probe.set_requires_grad(true);
    Tensor loss = analytic_fn(tape, probe);
    std::vector<double> analytic(probe.size(), 0.0);
    if (loss.requires_grad()) {
        tape.backward(loss);
        if (probe.has_grad()) analytic.assign(probe.grad().begin(), probe.grad().end());
    }

    double worst = 0.0;
    Tensor shifted = x.detach();
    for (std::size_t i = 0; i < shifted.size(); ++i) {
        const double original = shifted.at(i);
        shifted.mutable_data()[i] = original + step;
        const double up = evaluate(f, shifted);
        shifted.mutable_data()[i] = original - step;
        const double down = evaluate(f, shifted);
        shifted.mutable_data()[i] = original;
        const double numeric = (up - down) / (2.0 * step);
        const double err =
            std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace depthprune
