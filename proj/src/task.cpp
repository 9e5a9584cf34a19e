#include "depthprune/task.hpp"

#include <cmath>
#include <numeric>

#include "depthprune/errors.hpp"
#include "depthprune/rng.hpp"

namespace depthprune {

namespace {

struct MapWeights {
    std::vector<double> w1, b1, w2;
};

const MapWeights& map_weights() {
    static const MapWeights weights = [] {
        Rng rng(kTaskMapSeed);
        MapWeights w;
        w.w1.resize(kTaskInDim * kTaskHidden);
        w.b1.resize(kTaskHidden);
        w.w2.resize(kTaskHidden * kTaskOutDim);
        for (double& v : w.w1) v = rng.normal() * 1.5 / std::sqrt(static_cast<double>(kTaskInDim));
        for (double& v : w.b1) v = rng.normal() * 0.5;
        for (double& v : w.w2) v = rng.normal() / std::sqrt(static_cast<double>(kTaskHidden));
        return w;
    }();
    return weights;
}

}  // namespace

Tensor target_map(const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != kTaskInDim) {
        throw ShapeError("target_map expects [n x 8] inputs, got " + shape_str(x.shape()));
    }
    const MapWeights& w = map_weights();
    const std::size_t n = x.dim(0);
    std::vector<double> out(n * kTaskOutDim, 0.0);
    std::vector<double> hidden(kTaskHidden);
    auto xv = x.data();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t h = 0; h < kTaskHidden; ++h) {
            double acc = w.b1[h];
            for (std::size_t i = 0; i < kTaskInDim; ++i) acc += xv[r * kTaskInDim + i] * w.w1[i * kTaskHidden + h];
            hidden[h] = std::tanh(acc);
        }
        for (std::size_t o = 0; o < kTaskOutDim; ++o) {
            double acc = 0.0;
            for (std::size_t h = 0; h < kTaskHidden; ++h) acc += hidden[h] * w.w2[h * kTaskOutDim + o];
            out[r * kTaskOutDim + o] = acc;
        }
    }
    return Tensor::matrix(n, kTaskOutDim, std::move(out));
}

Dataset make_dataset(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw DomainError("dataset needs at least one sample");
    Rng rng(seed);
    std::vector<double> xs(n * kTaskInDim);
    for (double& v : xs) v = rng.uniform(-1.0, 1.0);
    Dataset data;
    data.x = Tensor::matrix(n, kTaskInDim, std::move(xs));
    std::vector<double> cond(n * kTaskCondDim);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < kTaskCondDim; ++j) cond[r * kTaskCondDim + j] = data.x.at(r * kTaskInDim + j);
    data.cond = Tensor::matrix(n, kTaskCondDim, std::move(cond));
    data.target = target_map(data.x);
    return data;
}

TaskData make_task_data(std::uint64_t seed, std::size_t n_train) {
    return TaskData{make_dataset(n_train, seed), make_dataset(kHeldoutSamples, seed + 1)};
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
    if (t.rank() != 2) throw ShapeError("gather_rows expects a matrix, got " + shape_str(t.shape()));
    if (indices.empty()) throw ShapeError("gather_rows needs at least one index");
    const std::size_t cols = t.dim(1);
    std::vector<double> out;
    out.reserve(indices.size() * cols);
    auto v = t.data();
    for (std::size_t idx : indices) {
        if (idx >= t.dim(0)) throw ContractError("row index " + std::to_string(idx) + " out of range");
        out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(idx * cols),
                   v.begin() + static_cast<std::ptrdiff_t>((idx + 1) * cols));
    }
    return Tensor::matrix(indices.size(), cols, std::move(out));
}

Dataset Dataset::rows(std::span<const std::size_t> indices) const {
    return Dataset{gather_rows(x, indices), gather_rows(cond, indices), gather_rows(target, indices)};
}

Dataset Dataset::head(std::size_t n) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return rows(idx);
}

}  // namespace depthprune
