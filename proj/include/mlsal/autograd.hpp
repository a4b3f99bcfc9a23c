#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mlsal/tensor.hpp"

namespace mlsal {

// Reverse-mode differentiation over a per-forward tape. Each op allocates a
// Node holding its value, its inputs, and a closure that pushes the node's
// gradient into its inputs. Parameters are long-lived leaf nodes; everything
// else is released when the last Var referring to the graph goes away.

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer() {
        if (!grad.same_shape(value)) grad = Tensor::like(value);
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    /// A leaf that never receives a gradient (images, ground truth).
    static Var constant(Tensor value) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        return Var(std::move(n));
    }

    /// A leaf that accumulates gradient (trainable parameters).
    static Var leaf(Tensor value) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool valid() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad_buffer() { return node_->grad_buffer(); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    const std::shared_ptr<Node>& node() const noexcept { return node_; }

    void zero_grad() {
        if (node_->grad.same_shape(node_->value)) node_->grad.fill(0.0);
    }

private:
    std::shared_ptr<Node> node_;
};

/// Builds an interior node. `fn` receives the node itself during backward.
inline Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (auto& v : inputs) {
        n->requires_grad = n->requires_grad || v.requires_grad();
        n->inputs.push_back(v.node());
    }
    if (n->requires_grad) n->backward = std::move(fn);
    return Var(std::move(n));
}

/// Seeds d(root)/d(root) = 1 and propagates to every reachable leaf.
inline void backward(const Var& root) {
    if (root.value().size() != 1) throw ShapeError("backward() requires a scalar root");
    if (!root.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node* child = n->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.same_shape(n->value)) n->backward(*n);
    }
    // Interior gradients are no longer needed; parameters keep theirs.
    for (Node* n : order) {
        if (n->backward) n->grad = Tensor();
    }
}

}  // namespace mlsal
