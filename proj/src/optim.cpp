#include "depthprune/optim.hpp"

#include <cmath>

namespace depthprune {

void zero_grads(std::span<Tensor> params) {
    for (Tensor& p : params) p.zero_grad();
}

double grad_norm(std::span<const Tensor> params) {
    double sq = 0.0;
    for (const Tensor& p : params) {
        for (double g : p.grad()) sq += g * g;
    }
    return std::sqrt(sq);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
    const double norm = grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (Tensor& p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.mutable_grad()) g *= factor;
        }
    }
    return norm;
}

void sgd_step(std::span<Tensor> params, double lr) {
    for (Tensor& p : params) {
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto v = p.mutable_data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Tensor& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = params_[k];
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto v = p.mutable_data();
        for (std::size_t i = 0; i < v.size(); ++i) {
            m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
            v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
            v[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
        }
    }
}

}  // namespace depthprune
