#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "depthprune/checkpoint.hpp"
#include "depthprune/errors.hpp"
#include "depthprune/tensor.hpp"

namespace depthprune {

/// Raised when a training loss turns non-finite. Carries the step index and
/// the parameters as they were before that step.
class TrainingAborted : public Error {
  public:
    TrainingAborted(const std::string& what, std::size_t step, Checkpoint last_good)
        : Error(what), step_(step), last_good_(std::move(last_good)) {}

    std::size_t step() const { return step_; }
    const Checkpoint& last_good() const { return last_good_; }

  private:
    std::size_t step_;
    Checkpoint last_good_;
};

void zero_grads(std::span<Tensor> params);

/// Global L2 norm of all gradients; params without a gradient count as zero.
double grad_norm(std::span<const Tensor> params);

/// Rescales gradients so their global norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

/// p -= lr * grad(p)
void sgd_step(std::span<Tensor> params, double lr);

/// Adam with bias correction. Used to pretrain teachers; mask learning and
/// fine-tuning use sgd_step.
class Adam {
  public:
    explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);
    void step();
    void set_lr(double lr) { lr_ = lr; }
    std::span<Tensor> params() { return params_; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

}  // namespace depthprune
