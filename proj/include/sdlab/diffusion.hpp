// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdlab/ops.hpp"
#include "sdlab/optim.hpp"
#include "sdlab/rng.hpp"
#include "sdlab/tensor.hpp"

namespace sdlab {

// ---------------------------------------------------------------- denoiser API

/// An epsilon-prediction network. `t` holds one step per batch row; `labels`
/// is empty for unconditional use, else one class id per row (the model's
/// null_label() selects the unconditional embedding).
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual Tensor forward(const Tensor& x_t, std::span<const int> t, std::span<const int> labels = {}) const = 0;

    virtual ParameterSet& parameters() = 0;
    virtual const ParameterSet& parameters() const = 0;

    /// Architecture descriptor, enough to rebuild an identically shaped model.
    virtual nlohmann::json descriptor() const = 0;

    virtual int null_label() const { return -1; }
};

// -------------------------------------------------------------------- schedule

/// beta/alpha/alpha_bar over steps t = 1..T. Index 0 of alpha_bar_at() is the
/// clean-data boundary where alpha_bar = 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    void check_step(int t, const char* op, int lo = 1) const {
        if (t < lo || t > T)
            throw InvalidArgument(std::string(op) + ": step " + std::to_string(t) + " outside [" + std::to_string(lo) +
                                  "," + std::to_string(T) + "]");
    }
    double beta_at(int t) const {
        check_step(t, "beta_at");
        return beta[static_cast<std::size_t>(t - 1)];
    }
    double alpha_at(int t) const {
        check_step(t, "alpha_at");
        return alpha[static_cast<std::size_t>(t - 1)];
    }
    double alpha_bar_at(int t) const {
        check_step(t, "alpha_bar_at", 0);
        return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t - 1)];
    }
};

inline NoiseSchedule make_schedule_from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.beta = std::move(betas);
    double acc = 1.0;
    for (double b : s.beta) {
        if (!(b > 0.0 && b < 1.0)) throw InvalidArgument("noise schedule: beta must lie in (0,1)");
        s.alpha.push_back(1.0 - b);
        acc *= 1.0 - b;
        s.alpha_bar.push_back(acc);
    }
    return s;
}

/// Betas linearly interpolated from beta_start to beta_end inclusive.
inline NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw InvalidArgument("make_linear_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw InvalidArgument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> b(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i)
        b[static_cast<std::size_t>(i)] =
            T == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(T - 1);
    return make_schedule_from_betas(std::move(b));
}

// ------------------------------------------------------------ forward process

/// sqrt(ab_t) x0 + sqrt(1 - ab_t) eps. t = 0 returns x0 unchanged.
inline Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape()) throw ShapeError("forward_diffuse", x0.shape(), eps.shape());
    sched.check_step(t, "forward_diffuse", 0);
    if (t == 0) return x0.detach();
    const double ab = sched.alpha_bar_at(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> out(x0.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return Tensor(x0.shape(), std::move(out));
}

/// Row-wise forward_diffuse for a batch whose first dim matches ts.
inline Tensor forward_diffuse_batch(const Tensor& x0, std::span<const int> ts, const Tensor& eps,
                                    const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape()) throw ShapeError("forward_diffuse_batch", x0.shape(), eps.shape());
    if (x0.rank() == 0 || x0.size(0) != ts.size())
        throw ShapeError("forward_diffuse_batch", x0.shape(), Shape{ts.size()});
    const std::size_t row = x0.numel() / ts.size();
    std::vector<double> out(x0.numel());
    for (std::size_t n = 0; n < ts.size(); ++n) {
        sched.check_step(ts[n], "forward_diffuse_batch", 0);
        const double ab = sched.alpha_bar_at(ts[n]);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (std::size_t i = n * row; i < (n + 1) * row; ++i) out[i] = a * x0[i] + b * eps[i];
    }
    return Tensor(x0.shape(), std::move(out));
}

/// The perturbed input shared by the DDPM objective and distillation.
struct NoisyBatch {
    Tensor x0;
    Tensor eps;
    Tensor x_t;
    std::vector<int> t;
};

/// Draws t ~ U{1..T} per row, then eps ~ N(0, I), in that order.
inline NoisyBatch draw_noisy_batch(const Tensor& x0, const NoiseSchedule& sched, Rng& rng) {
    NoisyBatch b;
    b.x0 = x0;
    b.t.resize(x0.size(0));
    for (auto& t : b.t) t = static_cast<int>(rng.uniform_int(1, sched.T));
    b.eps = Tensor::randn(x0.shape(), rng);
    b.x_t = forward_diffuse_batch(x0, b.t, b.eps, sched);
    return b;
}

inline Tensor ddpm_loss_on(const Denoiser& model, const NoisyBatch& batch, std::span<const int> labels = {}) {
    Tensor eps_hat = model.forward(batch.x_t, batch.t, labels);
    return mse(eps_hat, batch.eps);
}

/// Mean over batch and elements of |eps - eps_hat|^2 at uniformly drawn t.
inline Tensor ddpm_loss(const Denoiser& model, const Tensor& x0, const NoiseSchedule& sched, Rng& rng,
                        std::span<const int> labels = {}) {
    return ddpm_loss_on(model, draw_noisy_batch(x0, sched, rng), labels);
}

// --------------------------------------------------------------- reverse steps

enum class SigmaChoice { Beta, PosteriorVariance };

/// x_{t-1} = (x_t - beta_t / sqrt(1 - ab_t) eps_hat) / sqrt(alpha_t) + sigma_t z,
/// the epsilon form of the score-based update (score = -eps / sqrt(1 - ab_t)).
/// sigma_t is sqrt(beta_t), or the posterior sqrt(beta~_t) on request.
inline Tensor ancestral_step(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched,
                             const std::optional<Tensor>& z, SigmaChoice sigma_choice = SigmaChoice::Beta) {
    if (t < 1) throw InvalidArgument("ancestral_step: t must be >= 1");
    sched.check_step(t, "ancestral_step");
    if (x_t.shape() != eps_hat.shape()) throw ShapeError("ancestral_step", x_t.shape(), eps_hat.shape());
    if (z && z->shape() != x_t.shape()) throw ShapeError("ancestral_step", x_t.shape(), z->shape());
    const double beta = sched.beta_at(t), alpha = sched.alpha_at(t), ab = sched.alpha_bar_at(t);
    double sigma = std::sqrt(beta);
    if (sigma_choice == SigmaChoice::PosteriorVariance)
        sigma = std::sqrt((1.0 - sched.alpha_bar_at(t - 1)) / (1.0 - ab) * beta);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double coef = beta / std::sqrt(1.0 - ab);
    std::vector<double> out(x_t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
        if (z) out[i] += sigma * (*z)[i];
    }
    return Tensor(x_t.shape(), std::move(out));
}

/// Clean-data estimate (x_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t).
inline Tensor predict_x0(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched) {
    if (x_t.shape() != eps_hat.shape()) throw ShapeError("predict_x0", x_t.shape(), eps_hat.shape());
    const double ab = sched.alpha_bar_at(t);
    const double a = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> out(x_t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * (x_t[i] - b * eps_hat[i]);
    return Tensor(x_t.shape(), std::move(out));
}

/// DDIM update from t to t_prev (t_prev = 0 lands on the clean estimate).
/// eta = 0 is deterministic; eta > 0 requires z.
inline Tensor ddim_step(const Tensor& x_t, int t, int t_prev, const Tensor& eps_hat, const NoiseSchedule& sched,
                        double eta = 0.0, const std::optional<Tensor>& z = std::nullopt) {
    if (t_prev >= t) throw InvalidArgument("ddim_step: t_prev must be < t");
    sched.check_step(t, "ddim_step");
    sched.check_step(t_prev, "ddim_step", 0);
    const double ab = sched.alpha_bar_at(t), ab_prev = sched.alpha_bar_at(t_prev);
    const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    if (sigma > 0.0 && !z) throw InvalidArgument("ddim_step: eta > 0 requires noise z");
    const Tensor x0_hat = predict_x0(x_t, t, eps_hat, sched);
    const double a = std::sqrt(ab_prev);
    const double b = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    std::vector<double> out(x_t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * x0_hat[i] + b * eps_hat[i];
        if (sigma > 0.0) out[i] += sigma * (*z)[i];
    }
    return Tensor(x_t.shape(), std::move(out));
}

// ---------------------------------------------------------------- guidance

struct GuidanceConfig {
    double w = 0.0;
    int uncond_token = -1;
};

/// (1 + w) eps(x, t, cond) - w eps(x, t, uncond).
inline Tensor cfg_predict(const Denoiser& model, const Tensor& x_t, std::span<const int> t, std::span<const int> cond,
                          const GuidanceConfig& g) {
    if (g.w < 0) throw InvalidArgument("cfg_predict: guidance weight must be >= 0");
    NoGradGuard no_grad;
    const Tensor ec = model.forward(x_t, t, cond);
    if (cond.empty()) return ec;
    const int token = g.uncond_token >= 0 ? g.uncond_token : model.null_label();
    std::vector<int> uncond(cond.size(), token);
    const Tensor eu = model.forward(x_t, t, uncond);
    std::vector<double> out(ec.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 + g.w) * ec[i] - g.w * eu[i];
    return Tensor(ec.shape(), std::move(out));
}

// ----------------------------------------------------------------- sampling

enum class SamplerKind { Ancestral, Ddim };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::Ddim;
    int steps = 200;  // DDIM only; ancestral always walks T..1
    double eta = 0.0;
    double guidance = 0.0;
    SigmaChoice sigma = SigmaChoice::Beta;
};

/// Decreasing DDIM timesteps, evenly spaced in (0, T]; steps = T visits every step.
inline std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw InvalidArgument("ddim_timesteps: steps must lie in [1, T]");
    std::vector<int> ts;
    for (int k = steps; k >= 1; --k) {
        const long long num = static_cast<long long>(k) * T;
        ts.push_back(static_cast<int>(num / steps));
    }
    return ts;
}

/// A point on the reverse trajectory.
struct TrajectorySnapshot {
    int step = 0;  // 0-based index along the trajectory
    int t = 0;     // diffusion step the prediction was made at
    Tensor x0_hat;
};

/// Requests clean-estimate snapshots from sample(). With n snapshots the
/// recorded step indices are spread evenly and always include the last step.
struct SampleTrace {
    int n_snapshots = 0;
    std::vector<TrajectorySnapshot> snapshots;
};

namespace detail {
inline std::vector<int> snapshot_indices(int total_steps, int n) {
    std::vector<int> idx;
    if (n <= 0) return idx;
    if (n == 1) return {total_steps - 1};
    for (int k = 0; k < n; ++k) {
        const int i = static_cast<int>(std::lround(static_cast<double>(k) * (total_steps - 1) / (n - 1)));
        if (idx.empty() || idx.back() != i) idx.push_back(i);
    }
    return idx;
}
}  // namespace detail

/// Full reverse trajectory from x_T ~ N(0, I). `shape` includes the batch dim.
/// Throws NumericalDivergence (step = trajectory index) on non-finite values.
inline Tensor sample(const Denoiser& model, const NoiseSchedule& sched, const SamplerConfig& cfg, const Shape& shape,
                     Rng& rng, std::span<const int> labels = {}, SampleTrace* trace = nullptr) {
    NoGradGuard no_grad;
    Tensor x = Tensor::randn(shape, rng);
    const std::size_t batch = shape.at(0);
    if (!labels.empty() && labels.size() != batch) throw ShapeError("sample", shape, Shape{labels.size()});
    std::vector<int> ts;
    if (cfg.kind == SamplerKind::Ancestral) {
        for (int t = sched.T; t >= 1; --t) ts.push_back(t);
    } else {
        ts = ddim_timesteps(sched.T, cfg.steps);
    }
    const auto record = trace ? detail::snapshot_indices(static_cast<int>(ts.size()), trace->n_snapshots)
                              : std::vector<int>{};
    std::size_t next_record = 0;
    GuidanceConfig guide{cfg.guidance, model.null_label()};
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        const std::vector<int> tvec(batch, t);
        const Tensor eps_hat = cfg_predict(model, x, tvec, labels, guide);
        if (!all_finite(eps_hat)) throw NumericalDivergence(static_cast<std::int64_t>(k), "non-finite model output");
        if (next_record < record.size() && record[next_record] == static_cast<int>(k)) {
            trace->snapshots.push_back({static_cast<int>(k), t, predict_x0(x, t, eps_hat, sched)});
            ++next_record;
        }
        if (cfg.kind == SamplerKind::Ancestral) {
            std::optional<Tensor> z;
            if (t > 1) z = Tensor::randn(shape, rng);
            x = ancestral_step(x, t, eps_hat, sched, z, cfg.sigma);
        } else {
            const int t_prev = k + 1 < ts.size() ? ts[k + 1] : 0;
            std::optional<Tensor> z;
            if (cfg.eta > 0.0 && t_prev > 0) z = Tensor::randn(shape, rng);
            x = ddim_step(x, t, t_prev, eps_hat, sched, t_prev > 0 ? cfg.eta : 0.0, z);
        }
        if (!all_finite(x)) throw NumericalDivergence(static_cast<std::int64_t>(k), "non-finite sample");
    }
    return x;
}

}  // namespace sdlab
