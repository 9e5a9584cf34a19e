#pragma once

#include <cstddef>
#include <vector>

#include "depthprune/tensor.hpp"

// Differentiable operations. Each op computes its output eagerly and, when
// the tape is recording and an input requires grad, appends a node whose
// backward rule accumulates into the inputs' gradients.
namespace depthprune::ops {

/// [r x k] * [k x n] -> [r x n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);

/// x[n x d] + bias[d], bias broadcast over rows.
Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias);

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row normalization of x[n x d] to zero mean and unit variance, then
/// gain * xhat + bias.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))), the normative GELU.
double gelu_value(double x);
Tensor gelu(Tape& tape, const Tensor& x);

/// softmax(logits / tau) over a 1-D tensor.
Tensor softmax_temperature(Tape& tape, const Tensor& logits, double tau);

/// min(max(x, 0), 1). Gradient passes where 0 <= x <= 1 (closed interval).
Tensor clamp01(Tape& tape, const Tensor& x);

/// Forward: exact one-hot at argmax(soft), ties to the lowest index.
/// Backward: identity onto soft.
Tensor straight_through(Tape& tape, const Tensor& soft);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);
/// mean((a - b)^2)
Tensor mse(Tape& tape, const Tensor& a, const Tensor& b);
/// mean(|a - b|); the subgradient at a == b is 0.
Tensor l1(Tape& tape, const Tensor& a, const Tensor& b);

/// m[i] * phi + (1 - m[i]) * x, where m is a 1-D mask tensor.
Tensor gated_residual(Tape& tape, const Tensor& phi, const Tensor& x, const Tensor& mask,
                      std::size_t index);

/// h * (1 + scale) + shift for h[n x d]; scale and shift are [n x d] or [d].
Tensor modulate(Tape& tape, const Tensor& h, const Tensor& scale, const Tensor& shift);

/// Columns [begin, end) of x[n x m].
Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end);

/// Flattens and concatenates into one 1-D tensor.
Tensor concat(Tape& tape, const std::vector<Tensor>& parts);

/// Stacks equally sized tensors as the rows of an [n x L] matrix.
Tensor stack(Tape& tape, const std::vector<Tensor>& rows);

Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

/// w[n]^T * m[n x L] -> [L]
Tensor vecmat(Tape& tape, const Tensor& w, const Tensor& m);

}  // namespace depthprune::ops
