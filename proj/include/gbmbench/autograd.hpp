// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gbmbench/common.hpp"
#include "gbmbench/tensor.hpp"

namespace gbmbench {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Tape node. `parents` keeps upstream values alive for the backward pass;
/// extra saved state (pool indices, normalizer stats) lives in the closure.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    bool has_grad() const { return grad.defined(); }

    void accumulate(const Tensor& g) {
        if (!requires_grad) return;
        if (value.is_dry()) return;
        if (!grad.defined()) {
            grad = Tensor(value.shape());
            grad.fill(0.0f);
        }
        float* dst = grad.data();
        const float* src = g.data();
        const int64_t n = grad.numel();
        for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
inline bool grad_enabled() { return grad_mode(); }

/// RAII guard disabling graph construction (evaluation, metric plumbing).
struct NoGrad {
    NoGrad() : prev_(grad_mode()) { grad_mode() = false; }
    ~NoGrad() { grad_mode() = prev_; }

private:
    bool prev_;
};

/// Handle to a tape node. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor t, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->value = std::move(t);
        node_->requires_grad = requires_grad && !node_->value.is_dry();
        node_->is_leaf = true;
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor& val() const { return node_->value; }
    Tensor& val() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool is_dry() const { return node_->value.is_dry(); }

    const Tensor& grad() const {
        if (!node_->grad.defined()) throw Error("Var::grad: no gradient accumulated");
        return node_->grad;
    }
    bool has_grad() const { return node_ && node_->grad.defined(); }
    void zero_grad() {
        if (node_) node_->grad = Tensor();
    }

    NodePtr node() const { return node_; }

    /// Reverse-mode sweep from this (scalar) root.
    void backward() const {
        if (!node_) throw Error("backward: undefined Var");
        if (node_->value.numel() != 1) throw Error("backward: root must be a scalar");
        if (!node_->requires_grad) throw Error("backward: root does not require grad");
        Tensor seed(node_->value.shape());
        seed.fill(1.0f);
        node_->accumulate(seed);

        // Iterative post-order topological sort, then reverse visit.
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.push_back({node_.get(), 0});
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node* p = n->parents[idx++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
        }
    }

private:
    NodePtr node_;
};

/// Builds the result node of an op. The graph edge is dropped when grads are
/// globally disabled or no parent needs them, so eval passes free memory as
/// they go.
inline Var make_op(Tensor out, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    Var result(std::move(out), false);
    if (result.val().is_dry()) return result;
    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p.requires_grad()) needs = true;
    if (!needs) return result;
    Node* n = result.node().get();
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
    return result;
}

}  // namespace gbmbench
