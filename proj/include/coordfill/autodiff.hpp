#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "coordfill/tensor.hpp"

namespace coordfill {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    bool released = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Tensor<T>&)> backward_fn;

    Tensor<T>& grad_buffer() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }

    void accumulate(const Tensor<T>& g) {
        auto& buf = grad_buffer();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
    }
};

/// Handle to a value in the reverse-mode graph. Copies share the node.
template <typename T>
class Var {
public:
    Var() : node_(std::make_shared<Node<T>>()) {}

    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

    const Tensor<T>& value() const noexcept { return node_->value; }
    Tensor<T>& mutable_value() noexcept { return node_->value; }
    const Shape& shape() const noexcept { return node_->value.shape(); }

    bool requires_grad() const noexcept { return node_->requires_grad; }
    void set_requires_grad(bool on) noexcept { node_->requires_grad = on; }

    const Tensor<T>& grad() const { return node_->grad_buffer(); }
    Tensor<T>& grad() { return node_->grad_buffer(); }
    bool has_grad() const noexcept { return node_->grad.shape() == node_->value.shape(); }
    void zero_grad() {
        if (has_grad()) node_->grad.fill(T(0));
    }

    Var detach() const { return Var(node_->value, false); }

    T item() const {
        if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
        return node_->value[0];
    }

    const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording on this thread for its lifetime (inference).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Builds the result node of an op. The backward closure receives the
/// gradient of the output and is responsible for accumulating into inputs
/// that require gradients. Nothing is recorded when no input needs gradients.
template <typename T, typename Fn>
Var<T> make_op(Tensor<T> value, std::initializer_list<Var<T>> inputs, Fn&& backward) {
    Var<T> out(std::move(value), false);
    bool needs = false;
    if (grad_enabled())
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto& in : inputs) {
        if (in.requires_grad()) node.parents.push_back(in.node());
    }
    node.backward_fn = std::forward<Fn>(backward);
    return out;
}

template <typename T>
Var<T> make_op_list(Tensor<T> value, const std::vector<Var<T>>& inputs,
                    std::function<void(const Tensor<T>&)> backward) {
    Var<T> out(std::move(value), false);
    bool needs = false;
    if (grad_enabled())
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto& in : inputs) {
        if (in.requires_grad()) node.parents.push_back(in.node());
    }
    node.backward_fn = std::move(backward);
    return out;
}

/// Accumulates d(loss)/d(x) into every leaf reachable from `loss`. The
/// recorded graph is released afterwards; a second call on the same loss
/// throws until a new forward pass builds a fresh graph.
template <typename T>
void backward(const Var<T>& loss) {
    auto root = loss.node();
    if (root->released) throw GraphError("backward called twice without a new forward pass");
    if (root->value.size() != 1) throw ShapeError("backward expects a scalar loss, got " + shape_str(loss.shape()));
    if (!root->requires_grad) throw GraphError("loss does not depend on any parameter");

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node<T>* p = n->parents[idx++].get();
            if (!p->backward_fn || seen.count(p)) continue;
            seen.insert(p);
            stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root->grad = Tensor<T>(root->value.shape(), T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) {
            n->grad_buffer();
            n->backward_fn(n->grad);
        }
    }
    for (Node<T>* n : order) {
        n->backward_fn = nullptr;
        n->parents.clear();
        n->released = true;
        if (n != root.get()) n->grad = Tensor<T>();
    }
}

}  // namespace coordfill
