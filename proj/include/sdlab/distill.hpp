// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdlab/diffusion.hpp"
#include "sdlab/models.hpp"
#include "sdlab/ops.hpp"
#include "sdlab/optim.hpp"
#include "sdlab/spectral.hpp"

namespace sdlab {

struct DistillConfig {
    double lambda_s = 0.1;
    double lambda_f = 0.1;
    double alpha_w = -1.0;
    double eps_w = 1e-3;
    /// Orthonormal DFT and per-sample mean-one omega in the frequency loss;
    /// false keeps the raw unnormalized sum.
    bool normalize = true;
    /// (teacher feature index, student feature index); empty pairs every
    /// feature of WgUnet::forward_features with its same-index counterpart.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    void validate() const {
        if (!(alpha_w < 0.0)) throw ConfigError("distill.alpha_w must be negative");
        if (!(eps_w > 0.0)) throw ConfigError("distill.eps_w must be positive");
        if (lambda_s < 0.0 || lambda_f < 0.0) throw ConfigError("distill lambdas must be non-negative");
    }
};

/// One 1x1 conv per feature pair, mapping student channels to teacher
/// channels. Pairs whose channel counts already agree may use the identity.
class AdapterSet {
public:
    AdapterSet() = default;

    AdapterSet(const std::vector<std::size_t>& teacher_channels, const std::vector<std::size_t>& student_channels,
               const std::vector<std::pair<std::size_t, std::size_t>>& pairs, Rng& rng,
               bool identity_when_equal = true)
        : pairs_(pairs) {
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            const auto [ti, si] = pairs_[i];
            if (ti >= teacher_channels.size() || si >= student_channels.size())
                throw InvalidArgument("AdapterSet: pair index out of range");
            const std::size_t tc = teacher_channels[ti], sc = student_channels[si];
            if (identity_when_equal && tc == sc) {
                convs_.emplace_back(std::nullopt);
            } else {
                convs_.emplace_back(Conv::create(params_, "adapter" + std::to_string(i), sc, tc, 1, rng));
            }
        }
    }

    /// Default pairing: feature i of the teacher with feature i of the student.
    static std::vector<std::pair<std::size_t, std::size_t>> same_index_pairs(std::size_t n) {
        std::vector<std::pair<std::size_t, std::size_t>> p;
        for (std::size_t i = 0; i < n; ++i) p.emplace_back(i, i);
        return p;
    }

    Tensor apply(std::size_t pair, const Tensor& student_feature) const {
        const auto& c = convs_.at(pair);
        return c ? (*c)(student_feature) : student_feature;
    }

    const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const { return pairs_; }
    std::size_t size() const { return pairs_.size(); }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

private:
    std::vector<std::pair<std::size_t, std::size_t>> pairs_;
    std::vector<std::optional<Conv>> convs_;
    ParameterSet params_;
};

/// Sum over pairs of the mean squared difference.
inline Tensor spatial_distill_loss(const std::vector<std::pair<Tensor, Tensor>>& pairs) {
    Tensor total = Tensor::scalar(0.0);
    for (const auto& [t, s] : pairs) {
        if (t.shape() != s.shape()) throw ShapeError("spatial_distill_loss", t.shape(), s.shape());
        total = add(total, mse(s, t));
    }
    return total;
}

/// Bilinear resize with half-pixel centres over the last two dims. x is
/// [N,C,H,W]; not differentiable.
inline Tensor bilinear_resize(const Tensor& x, std::size_t oh, std::size_t ow) {
    const auto [N, C, H, W] = detail::as_nchw("bilinear_resize", x.shape());
    if (oh == 0 || ow == 0) throw ShapeError("bilinear_resize", "empty target size");
    if (oh == H && ow == W) return x.detach();
    auto coord = [](std::size_t o, std::size_t in, std::size_t out, std::size_t& i0, std::size_t& i1, double& f) {
        double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        if (s < 0) s = 0;
        i0 = std::min(static_cast<std::size_t>(s), in - 1);
        i1 = std::min(i0 + 1, in - 1);
        f = s - static_cast<double>(i0);
    };
    std::vector<double> out(N * C * oh * ow);
    for (std::size_t p = 0; p < N * C; ++p)
        for (std::size_t y = 0; y < oh; ++y) {
            std::size_t y0, y1;
            double fy;
            coord(y, H, oh, y0, y1, fy);
            for (std::size_t xx = 0; xx < ow; ++xx) {
                std::size_t x0, x1;
                double fx;
                coord(xx, W, ow, x0, x1, fx);
                const double* ip = x.values().data() + p * H * W;
                const double top = (1 - fx) * ip[y0 * W + x0] + fx * ip[y0 * W + x1];
                const double bot = (1 - fx) * ip[y1 * W + x0] + fx * ip[y1 * W + x1];
                out[(p * oh + y) * ow + xx] = (1 - fy) * top + fy * bot;
            }
        }
    return Tensor(x.rank() == 3 ? Shape{C, oh, ow} : Shape{N, C, oh, ow}, std::move(out));
}

/// omega[n](u,v) = (|DFT(resize(x0[n]))(u,v)| + eps_w)^alpha_w, shape [N,h,w].
/// Multi-channel x0 uses the channel-mean magnitude.
inline Tensor freq_weight(const Tensor& x0, std::size_t h, std::size_t w, double alpha_w, double eps_w) {
    const auto [N, C, H, W] = detail::as_nchw("freq_weight", x0.shape());
    if (h > H || w > W) throw ShapeError("freq_weight", x0.shape(), Shape{h, w});
    const Tensor r = bilinear_resize(x0.rank() == 3 ? reshape(x0.detach(), {1, C, H, W}) : x0.detach(), h, w);
    std::vector<double> out(N * h * w, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const SpectrumGrid g = dft2(r.data().subspan((n * C + c) * h * w, h * w), h, w);
            for (std::size_t k = 0; k < h * w; ++k) out[n * h * w + k] += std::abs(g.coefficients[k]);
        }
        for (std::size_t k = 0; k < h * w; ++k) {
            const double mag = out[n * h * w + k] / static_cast<double>(C);
            out[n * h * w + k] = std::pow(mag + eps_w, alpha_w);
        }
    }
    return Tensor({N, h, w}, std::move(out));
}

/// Rescales each sample's omega to mean one over (u, v).
inline Tensor mean_one_weight(const Tensor& omega) {
    const std::size_t N = omega.size(0), plane = omega.numel() / N;
    std::vector<double> out(omega.values());
    for (std::size_t n = 0; n < N; ++n) {
        double m = 0;
        for (std::size_t k = 0; k < plane; ++k) m += out[n * plane + k] / static_cast<double>(plane);
        for (std::size_t k = 0; k < plane; ++k) out[n * plane + k] /= m;
    }
    return Tensor(omega.shape(), std::move(out));
}

/// Sum over pairs of mean over (n,c,u,v) of omega * |F[X_T] - F[X_S]|^2.
/// Normalized: F is orthonormal and omega has mean one per sample, so a
/// flat omega gives the spatial loss.
inline Tensor freq_distill_loss(const std::vector<std::pair<Tensor, Tensor>>& pairs, const Tensor& x0,
                                const DistillConfig& cfg) {
    Tensor total = Tensor::scalar(0.0);
    for (const auto& [t, s] : pairs) {
        if (t.shape() != s.shape()) throw ShapeError("freq_distill_loss", t.shape(), s.shape());
        const auto [N, C, H, W] = detail::as_nchw("freq_distill_loss", t.shape());
        (void)N;
        (void)C;
        Tensor omega = freq_weight(x0, H, W, cfg.alpha_w, cfg.eps_w);
        const Tensor diff = t.rank() == 3 ? reshape(sub(t, s), {1, t.size(0), H, W}) : sub(t, s);
        if (cfg.normalize)
            total = add(total, scale(weighted_spectral_energy(diff, mean_one_weight(omega)), 1.0 / static_cast<double>(H * W)));
        else
            total = add(total, weighted_spectral_energy(diff, omega));
    }
    return total;
}

struct DistillLosses {
    double l_ddpm = 0.0;
    double l_spatial = 0.0;
    double l_freq = 0.0;
    double total = 0.0;
};

/// Builds the combined objective for one perturbed batch. The teacher runs
/// without gradients. With both lambdas zero no teacher pass is made and the
/// graph is exactly that of the plain DDPM loss.
inline Tensor distill_objective(const WgUnet& teacher, const WgUnet& student, const AdapterSet& adapters,
                                const NoisyBatch& batch, std::span<const int> labels, const DistillConfig& cfg,
                                DistillLosses& losses) {
    if (cfg.lambda_s == 0.0 && cfg.lambda_f == 0.0) {
        Tensor l = ddpm_loss_on(student, batch, labels);
        losses = {l.item(), 0.0, 0.0, l.item()};
        return l;
    }
    std::vector<Tensor> tf, sf;
    {
        NoGradGuard ng;
        teacher.forward_features(batch.x_t, batch.t, labels, &tf);
    }
    const Tensor eps_hat = student.forward_features(batch.x_t, batch.t, labels, &sf);
    const Tensor l_ddpm = mse(eps_hat, batch.eps);
    std::vector<std::pair<Tensor, Tensor>> pairs;
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        const auto [ti, si] = adapters.pairs()[i];
        pairs.emplace_back(tf.at(ti), adapters.apply(i, sf.at(si)));
    }
    Tensor total = l_ddpm;
    losses = {l_ddpm.item(), 0.0, 0.0, 0.0};
    if (cfg.lambda_s != 0.0) {
        const Tensor ls = spatial_distill_loss(pairs);
        losses.l_spatial = ls.item();
        total = add(total, scale(ls, cfg.lambda_s));
    }
    if (cfg.lambda_f != 0.0) {
        const Tensor lf = freq_distill_loss(pairs, batch.x0, cfg);
        losses.l_freq = lf.item();
        total = add(total, scale(lf, cfg.lambda_f));
    }
    losses.total = total.item();
    return total;
}

/// One optimisation step on `trainable` (student plus adapter parameters).
inline DistillLosses distill_train_step(const WgUnet& teacher, const WgUnet& student, const AdapterSet& adapters,
                                        ParameterSet& trainable, AdamW& opt, double lr, const Tensor& x0,
                                        std::span<const int> labels, const NoiseSchedule& sched,
                                        const DistillConfig& cfg, Rng& rng) {
    const NoisyBatch batch = draw_noisy_batch(x0, sched, rng);
    DistillLosses losses;
    Tensor total = distill_objective(teacher, student, adapters, batch, labels, cfg, losses);
    if (!std::isfinite(losses.total)) throw NumericalDivergence(opt.steps() + 1, "distillation loss is not finite");
    total.backward();
    opt.step(trainable, lr);
    return losses;
}

}  // namespace sdlab
