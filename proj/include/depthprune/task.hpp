#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "depthprune/tensor.hpp"

namespace depthprune {

/// Rows of (x, cond, target) for the synthetic regression task.
struct Dataset {
    Tensor x;       ///< [n x 8], uniform on [-1, 1]
    Tensor cond;    ///< [n x 4], the first four input coordinates
    Tensor target;  ///< [n x 8], fixed tanh map of x

    std::size_t size() const { return x.defined() ? x.dim(0) : 0; }
    Dataset rows(std::span<const std::size_t> indices) const;
    Dataset head(std::size_t n) const;
};

inline constexpr std::size_t kTaskInDim = 8;
inline constexpr std::size_t kTaskOutDim = 8;
inline constexpr std::size_t kTaskCondDim = 4;
inline constexpr std::size_t kTaskHidden = 16;
/// Seed of the target map; independent of every run seed.
inline constexpr std::uint64_t kTaskMapSeed = 1729;
inline constexpr std::size_t kDefaultTrainSamples = 4096;
inline constexpr std::size_t kHeldoutSamples = 1024;

/// target = tanh(x * W1 + b1) * W2, all drawn from kTaskMapSeed.
Tensor target_map(const Tensor& x);

/// n samples drawn from `seed`.
Dataset make_dataset(std::size_t n, std::uint64_t seed);

struct TaskData {
    Dataset train;    ///< drawn from seed
    Dataset heldout;  ///< kHeldoutSamples drawn from seed + 1, never trained on
};
TaskData make_task_data(std::uint64_t seed, std::size_t n_train = kDefaultTrainSamples);

/// Copies the listed rows of a 2-D tensor.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);

}  // namespace depthprune
