#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "spdnet/tensor.hpp"

namespace spdnet {

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Receives this node's upstream gradient and accumulates into inputs.
    std::function<void(const Tensor<T>&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

/// Handle to a node of the reverse-mode graph. Copies share the node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }

    /// Accumulated gradient; empty until a backward pass reaches this node.
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad = Tensor<T>(); }

    Node<T>* raw() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Wraps a computed value as a graph node. The backward closure receives the
/// node's output gradient; it is only stored when recording is enabled and at
/// least one input needs a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(const Tensor<T>&)> backward) {
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Var<T>(std::move(node));
}

/// Accumulates d(root)/d(leaf) into every reachable node that requires a
/// gradient. `root` must hold a single element.
template <typename T>
void backward(const Var<T>& root) {
    if (root.value().size() != 1) throw InvalidShape("backward() needs a scalar root");
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.raw(), 0}};
    visited.insert(root.raw());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.raw()->grad_buffer().fill(T{1});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(node->grad);
    }
}

}  // namespace spdnet
