#pragma once

#include "beatflow/core/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace beatflow::nn {

template <typename Scalar>
struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    /// Gradient buffer, zero-allocated on first use.
    Tensor<Scalar>& grad_buffer()
    {
        if (grad.size() != value.size()) {
            grad = Tensor<Scalar>(value.shape());
        }
        return grad;
    }
};

/// Whether new operations record a backward closure (thread-local).
bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Handle to a node of the computation graph.
template <typename Scalar>
class Var {
public:
    using NodeT = Node<Scalar>;
    using NodePtr = std::shared_ptr<NodeT>;

    Var() = default;
    explicit Var(Tensor<Scalar> value, bool requires_grad = false)
        : node_(std::make_shared<NodeT>())
    {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static Var parameter(Tensor<Scalar> value) { return Var(std::move(value), true); }

    /// Result of an operation. The closure is kept only if some input needs a gradient.
    static Var from_op(Tensor<Scalar> value, std::vector<Var> inputs, std::function<void(NodeT&)> backward)
    {
        Var out(std::move(value));
        if (!grad_enabled()) {
            return out;
        }
        bool needs = false;
        for (const Var& in : inputs) {
            needs = needs || in.requires_grad();
        }
        if (needs) {
            out.node_->requires_grad = true;
            out.node_->backward = std::move(backward);
            out.node_->inputs.reserve(inputs.size());
            for (Var& in : inputs) {
                out.node_->inputs.push_back(std::move(in.node_));
            }
        }
        return out;
    }

    [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
    [[nodiscard]] const Tensor<Scalar>& value() const { return node_->value; }
    [[nodiscard]] Tensor<Scalar>& mutable_value() { return node_->value; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    [[nodiscard]] int dim(int axis) const { return node_->value.dim(axis); }
    [[nodiscard]] bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    [[nodiscard]] Tensor<Scalar>& grad() { return node_->grad_buffer(); }
    [[nodiscard]] bool has_grad() const { return node_->grad.size() == node_->value.size() && node_->value.size() > 0; }
    void zero_grad()
    {
        if (has_grad()) {
            node_->grad.set_zero();
        }
    }
    [[nodiscard]] NodeT* node() const noexcept { return node_.get(); }

    /// Scalar value of a single-element tensor.
    [[nodiscard]] Scalar item() const { return node_->value[0]; }

private:
    NodePtr node_;
};

/// Reverse-mode sweep from a single-element output; gradients accumulate into leaves.
/// The recorded graph is released afterwards.
template <typename Scalar>
void backward(const Var<Scalar>& output);

/// Adds `g` into the gradient of `node` when it participates in differentiation.
template <typename Scalar, typename Derived>
inline void accumulate(Node<Scalar>& node, const Eigen::MatrixBase<Derived>& g)
{
    if (node.requires_grad) {
        node.grad_buffer().vec() += g;
    }
}

extern template void backward<float>(const Var<float>&);
extern template void backward<double>(const Var<double>&);

}  // namespace beatflow::nn
