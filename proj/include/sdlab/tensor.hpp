// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sdlab/errors.hpp"
#include "sdlab/rng.hpp"

namespace sdlab {

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the define-by-run graph. A leaf has no parents; an interior
// node owns a backward closure that reads its own grad and accumulates into
// its parents' grads.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major f64 array with an optional reverse-mode gradient.
///
/// Copies share the underlying node (handle semantics); use clone() or
/// detach() for an independent value.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape_numel(shape) != data.size()) {
            throw ShapeError("Tensor", "shape " + shape_str(shape) + " holds " +
                                           std::to_string(shape_numel(shape)) + " values, got " +
                                           std::to_string(data.size()));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
    }
    static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), 1.0, requires_grad); }
    static Tensor scalar(double v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        std::vector<double> d(shape_numel(shape));
        for (auto& x : d) x = stddev * rng.normal();
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
        std::vector<double> d(shape_numel(shape));
        for (auto& x : d) x = lo + (hi - lo) * rng.uniform();
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> data() const { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }

    /// Mutable view, only for leaves (parameters, inputs).
    std::span<double> mutable_data() {
        if (!node_->leaf) throw InvalidArgument("mutable_data: tensor is not a leaf");
        return node_->value;
    }

    double operator[](std::size_t i) const { return node_->value[i]; }

    double item() const {
        if (numel() != 1) throw ShapeError("item", "expected one element, shape " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        if (!node_->leaf) throw InvalidArgument("set_requires_grad: tensor is not a leaf");
        node_->requires_grad = on;
        return *this;
    }
    bool is_leaf() const { return node_->leaf; }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::span<const double> grad() const {
        if (!has_grad()) throw InvalidArgument("grad: no gradient has been populated");
        return node_->grad;
    }
    Tensor grad_tensor() const { return Tensor(shape(), std::vector<double>(grad().begin(), grad().end())); }
    void zero_grad() { node_->grad.clear(); }

    /// Independent leaf holding a copy of the values.
    Tensor detach() const { return Tensor(shape(), node_->value); }
    Tensor clone() const { return Tensor(shape(), node_->value, requires_grad() && is_leaf()); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    /// Reverse-mode pass from a scalar. Leaf grads accumulate across calls;
    /// interior grads are reset first so each call contributes exactly once.
    void backward() const {
        if (numel() != 1) throw ShapeError("backward", "loss must be scalar, got shape " + shape_str(shape()));
        std::vector<detail::Node*> order;
        std::unordered_set<detail::Node*> seen;
        std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                detail::Node* p = n->parents[next++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        for (auto* n : order) {
            if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
        }
        node_->grad_buffer()[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward) (*it)->backward(**it);
        }
    }

    // Builds an op result. The graph edge is recorded only when grad mode is
    // on and at least one parent participates in differentiation.
    static Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> parents,
                              std::function<void(detail::Node&)> backward) {
        return make_result(std::move(shape), std::move(value), std::vector<Tensor>(parents), std::move(backward));
    }
    static Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
                              std::function<void(detail::Node&)> backward) {
        Tensor out(std::move(shape), std::move(value));
        const bool track = grad_enabled() && std::any_of(parents.begin(), parents.end(),
                                                         [](const Tensor& p) { return p.requires_grad(); });
        if (track) {
            out.node_->requires_grad = true;
            out.node_->leaf = false;
            for (const auto& p : parents) out.node_->parents.push_back(p.node_);
            out.node_->backward = std::move(backward);
        }
        return out;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

/// True when every value is finite.
inline bool all_finite(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace sdlab
