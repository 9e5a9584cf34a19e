#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace depthprune {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// A Tensor is a handle: copies share storage, the way parameters are shared
/// between a network and the tape that records operations on it. Use clone()
/// for an independent copy.
class Tensor {
  public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const;
    bool defined() const { return impl_ != nullptr; }

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double at(std::size_t flat_index) const { return data()[flat_index]; }
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    std::span<const double> grad() const;
    /// Allocates a zeroed gradient buffer on first use.
    std::span<double> mutable_grad();
    void zero_grad();
    void clear_grad();

    Tensor clone() const;
    /// Deep copy that never requires grad.
    Tensor detach() const;

    bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }
    /// Storage identity, stable for the lifetime of the storage.
    const void* id() const { return impl_.get(); }

  private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

/// Append-only record of differentiable operations.
///
/// Nodes are appended in execution order, so reverse iteration is a valid
/// reverse topological order. A tape constructed with recording=false
/// evaluates operations without storing anything (inference mode).
class Tape {
  public:
    using BackwardFn = std::function<void(std::span<const double> out_grad)>;

    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    /// Records a node if any input requires grad; marks output accordingly.
    void record(const std::vector<Tensor>& inputs, Tensor& output, BackwardFn backward);

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// requires_grad tensor reachable from the loss.
    void backward(const Tensor& loss);

    void clear() { nodes_.clear(); }

    /// True when every node's recorded inputs are leaves or outputs of
    /// earlier nodes.
    bool topologically_ordered() const;

  private:
    struct Node {
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };
    bool recording_;
    std::vector<Node> nodes_;
};

}  // namespace depthprune
