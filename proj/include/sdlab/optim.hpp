// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdlab/tensor.hpp"

namespace sdlab {

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// Ordered, named collection of trainable leaves.
class ParameterSet {
public:
    Tensor add(std::string name, Tensor value) {
        for (const auto& p : items_)
            if (p.name == name) throw InvalidArgument("ParameterSet: duplicate parameter " + name);
        value.set_requires_grad(true);
        items_.push_back({std::move(name), value});
        return value;
    }

    const std::vector<NamedTensor>& items() const { return items_; }
    std::vector<NamedTensor>& items() { return items_; }

    Tensor get(const std::string& name) const {
        for (const auto& p : items_)
            if (p.name == name) return p.value;
        throw InvalidArgument("ParameterSet: no parameter named " + name);
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p.value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : items_) p.value.zero_grad();
    }

    void set_requires_grad(bool on) {
        for (auto& p : items_) p.value.set_requires_grad(on);
    }

    /// Overwrites values by name; every name must exist with a matching shape.
    void copy_values_from(const ParameterSet& other) {
        for (auto& p : items_) {
            Tensor src = other.get(p.name);
            if (src.shape() != p.value.shape()) throw ShapeError("copy_values_from " + p.name, p.value.shape(), src.shape());
            std::copy(src.data().begin(), src.data().end(), p.value.mutable_data().begin());
        }
    }

private:
    std::vector<NamedTensor> items_;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
};

/// One AdamW update in place. `step` is the 1-based update count used for
/// bias correction. Decay acts on the parameter directly, not through the
/// gradient.
inline void adamw_step(std::span<double> param, std::span<const double> grad, AdamMoments& state, std::int64_t step,
                       const AdamWConfig& cfg) {
    if (state.m.size() != param.size()) state.m.assign(param.size(), 0.0);
    if (state.v.size() != param.size()) state.v.assign(param.size(), 0.0);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        param[i] -= cfg.lr * cfg.weight_decay * param[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

/// AdamW over a ParameterSet, keyed by parameter name.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    /// Applies one update with learning rate `lr` and clears grads.
    void step(ParameterSet& params, double lr) {
        ++steps_;
        AdamWConfig c = cfg_;
        c.lr = lr;
        for (auto& p : params.items()) {
            std::span<const double> g;
            if (p.value.has_grad()) g = p.value.grad();
            adamw_step(p.value.mutable_data(), g, moments_[p.name], steps_, c);
            p.value.zero_grad();
        }
    }

    const AdamWConfig& config() const { return cfg_; }
    std::int64_t steps() const { return steps_; }
    void set_steps(std::int64_t s) { steps_ = s; }
    std::map<std::string, AdamMoments>& moments() { return moments_; }
    const std::map<std::string, AdamMoments>& moments() const { return moments_; }

private:
    AdamWConfig cfg_;
    std::int64_t steps_ = 0;
    std::map<std::string, AdamMoments> moments_;
};

/// Linear decay from `base` at step 0 toward zero at `total` steps.
inline double linear_decay_lr(double base, std::int64_t step, std::int64_t total) {
    if (total <= 0) return base;
    return base * (1.0 - static_cast<double>(step) / static_cast<double>(total));
}

}  // namespace sdlab
