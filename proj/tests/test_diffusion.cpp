// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace sdlab;
using sdlab::testing::bitwise_equal;
using sdlab::testing::grad_check;

namespace {

// eps_hat = a * x_t + b, with scalar a and b.
class AffineDenoiser : public Denoiser {
public:
    AffineDenoiser(double a, double b) {
        a_ = params_.add("a", Tensor::scalar(a));
        b_ = params_.add("b", Tensor::scalar(b));
    }
    Tensor forward(const Tensor& x, std::span<const int>, std::span<const int>) const override {
        return add(mul(x, a_), b_);
    }
    ParameterSet& parameters() override { return params_; }
    const ParameterSet& parameters() const override { return params_; }
    nlohmann::json descriptor() const override { return {{"kind", "affine"}}; }
    Tensor a_, b_;

private:
    ParameterSet params_;
};

// Returns the noise that maps x0 to x_t for a point-mass dataset at x0.
class PointMassOracle : public Denoiser {
public:
    PointMassOracle(Tensor x0, const NoiseSchedule& s) : x0_(std::move(x0)), s_(s) {}
    Tensor forward(const Tensor& x, std::span<const int> t, std::span<const int>) const override {
        std::vector<double> out(x.numel());
        const std::size_t row = x.numel() / t.size();
        for (std::size_t n = 0; n < t.size(); ++n) {
            const double ab = s_.alpha_bar_at(t[n]);
            for (std::size_t i = 0; i < row; ++i)
                out[n * row + i] = (x[n * row + i] - std::sqrt(ab) * x0_[i]) / std::sqrt(1.0 - ab);
        }
        return Tensor(x.shape(), std::move(out));
    }
    ParameterSet& parameters() override { return params_; }
    const ParameterSet& parameters() const override { return params_; }
    nlohmann::json descriptor() const override { return {{"kind", "oracle"}}; }

private:
    Tensor x0_;
    const NoiseSchedule& s_;
    ParameterSet params_;
};

// Class-conditional toy: output is x + label, null label 9 gives x.
class LabelShift : public Denoiser {
public:
    Tensor forward(const Tensor& x, std::span<const int> t, std::span<const int> labels) const override {
        std::vector<double> out(x.data().begin(), x.data().end());
        const std::size_t row = x.numel() / t.size();
        for (std::size_t n = 0; n < labels.size(); ++n)
            for (std::size_t i = 0; i < row; ++i) out[n * row + i] += labels[n] == 9 ? 0.0 : labels[n];
        return Tensor(x.shape(), std::move(out));
    }
    ParameterSet& parameters() override { return params_; }
    const ParameterSet& parameters() const override { return params_; }
    nlohmann::json descriptor() const override { return {}; }
    int null_label() const override { return 9; }

private:
    ParameterSet params_;
};

TEST(Schedule, SingleStep) {
    const NoiseSchedule s = make_linear_schedule(1, 0.01, 0.02);
    ASSERT_EQ(s.beta.size(), 1u);
    EXPECT_DOUBLE_EQ(s.beta[0], 0.01);
}

TEST(Schedule, StandardLinearEndpoints) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    EXPECT_DOUBLE_EQ(s.beta.front(), 1e-4);
    EXPECT_DOUBLE_EQ(s.beta.back(), 0.02);
    EXPECT_NEAR(s.alpha_bar_at(1000), 4.0e-5, 0.1e-5);
    double acc = 1.0;
    for (int t = 1; t <= s.T; ++t) {
        acc *= s.alpha_at(t);
        EXPECT_NEAR(s.alpha_bar_at(t), acc, 1e-12);
        EXPECT_LT(s.alpha_bar_at(t), s.alpha_bar_at(t - 1));
        if (t > 1) {
            EXPECT_GE(s.beta_at(t), s.beta_at(t - 1));
        }
    }
    EXPECT_LT(s.alpha_bar_at(1), 1.0);
}

TEST(Schedule, BoundsRejected) {
    EXPECT_THROW(make_linear_schedule(10, 0.0, 0.02), InvalidArgument);
    EXPECT_THROW(make_linear_schedule(10, 0.03, 0.02), InvalidArgument);
    EXPECT_THROW(make_linear_schedule(10, 0.01, 1.0), InvalidArgument);
    EXPECT_THROW(make_linear_schedule(0, 0.01, 0.02), InvalidArgument);
}

TEST(ForwardDiffuse, Examples) {
    const NoiseSchedule s = make_schedule_from_betas({0.36});
    const Tensor x = forward_diffuse(Tensor({2}, {1, -1}), 1, Tensor({2}, {0.5, 0.5}), s);
    EXPECT_NEAR(x[0], 1.1, 1e-12);
    EXPECT_NEAR(x[1], -0.5, 1e-12);

    const Tensor x0({3}, {0.3, -2, 5}), eps({3}, {1, 2, 3});
    const Tensor id = forward_diffuse(x0, 0, eps, s);
    EXPECT_TRUE(bitwise_equal(id, x0));
    const Tensor z = forward_diffuse(Tensor::zeros({3}), 1, eps, s);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(z[i], 0.6 * eps[i], 1e-12);

    EXPECT_THROW(forward_diffuse(x0, 2, eps, s), InvalidArgument);
    EXPECT_THROW(forward_diffuse(x0, -1, eps, s), InvalidArgument);
    EXPECT_THROW(forward_diffuse(x0, 1, Tensor::zeros({2}), s), ShapeError);
}

TEST(ForwardDiffuse, MarginalStatistics) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    Rng rng(21);
    const Tensor x0({4}, {1.0, -0.5, 2.0, 0.0});
    for (int t : {10, 300, 900}) {
        const std::size_t n = 200000;
        const double ab = s.alpha_bar_at(t);
        std::vector<double> m(4, 0.0), m2(4, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            const Tensor x = forward_diffuse(x0, t, Tensor::randn({4}, rng), s);
            for (std::size_t i = 0; i < 4; ++i) {
                m[i] += x[i];
                m2[i] += x[i] * x[i];
            }
        }
        for (std::size_t i = 0; i < 4; ++i) {
            const double mean = m[i] / n, var = m2[i] / n - mean * mean;
            const double se = std::sqrt((1.0 - ab) / n);
            EXPECT_LT(std::abs(mean - std::sqrt(ab) * x0[i]), 3 * se) << "t=" << t;
            EXPECT_NEAR(var / (1.0 - ab), 1.0, 0.02) << "t=" << t;
        }
    }
}

TEST(DdpmLoss, OracleIsZero) {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(22);
    const Tensor x0 = Tensor::randn({8, 5}, rng);
    const NoisyBatch b = draw_noisy_batch(x0, s, rng);
    class EpsOracle : public Denoiser {
    public:
        explicit EpsOracle(Tensor e) : e_(std::move(e)) {}
        Tensor forward(const Tensor&, std::span<const int>, std::span<const int>) const override { return e_; }
        ParameterSet& parameters() override { return p_; }
        const ParameterSet& parameters() const override { return p_; }
        nlohmann::json descriptor() const override { return {}; }
        Tensor e_;
        ParameterSet p_;
    } oracle(b.eps);
    EXPECT_EQ(ddpm_loss_on(oracle, b).item(), 0.0);
}

TEST(DdpmLoss, ZeroModelGivesUnitSecondMoment) {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    AffineDenoiser zero(0.0, 0.0);
    Rng rng(23);
    const Tensor x0 = Tensor::randn({100, 100}, rng);
    const double loss = ddpm_loss(zero, x0, s, rng).item();
    // 1e4 chi-square(1) draws have sd sqrt(2 / 1e4).
    EXPECT_LT(std::abs(loss - 1.0), 3 * std::sqrt(2.0 / 1e4));
}

TEST(DdpmLoss, GradientOnTwoParameterModel) {
    const NoiseSchedule s = make_linear_schedule(50, 1e-3, 0.05);
    AffineDenoiser m(0.3, -0.2);
    Rng rng(24);
    const NoisyBatch b = draw_noisy_batch(Tensor::randn({6, 3}, rng), s, rng);
    EXPECT_LT(grad_check([&] { return ddpm_loss_on(m, b); }, {m.a_, m.b_}), 1e-6);
}

TEST(AncestralStep, Examples) {
    const NoiseSchedule s = make_linear_schedule(10, 0.01, 0.1);
    const Tensor x({3}, {1.0, -2.0, 0.5});
    const Tensor zero = Tensor::zeros({3});
    const Tensor y = ancestral_step(x, 5, zero, s, zero);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], x[i] / std::sqrt(s.alpha_at(5)), 1e-14);

    const NoiseSchedule tiny = make_linear_schedule(3, 1e-12, 1e-12);
    const Tensor e({3}, {0.3, 0.1, -0.7});
    const Tensor w = ancestral_step(x, 2, e, tiny, e);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w[i], x[i], 1e-5);

    EXPECT_THROW(ancestral_step(x, 0, zero, s, zero), InvalidArgument);
}

TEST(AncestralStep, SingleStepMatchesPosteriorMean) {
    const NoiseSchedule s = make_schedule_from_betas({0.3});
    const Tensor x0({2}, {0.7, -1.2}), eps({2}, {0.4, 1.1});
    const Tensor x1 = forward_diffuse(x0, 1, eps, s);
    const Tensor got = ancestral_step(x1, 1, eps, s, std::nullopt);
    // Posterior mean with ab_0 = 1: coefficients sqrt(ab_0) beta / (1 - ab) on x0
    // and sqrt(alpha) (1 - ab_0) / (1 - ab) on x1, with x0 recovered from eps.
    const double beta = 0.3, ab = 0.7;
    for (std::size_t i = 0; i < 2; ++i) {
        const double x0_hat = (x1[i] - std::sqrt(1 - ab) * eps[i]) / std::sqrt(ab);
        const double mu = beta / (1 - ab) * x0_hat;
        EXPECT_NEAR(got[i], mu, 1e-12);
        EXPECT_NEAR(got[i], x0[i], 1e-12);
    }
}

TEST(AncestralStep, PosteriorSigma) {
    const NoiseSchedule s = make_linear_schedule(10, 0.01, 0.1);
    const Tensor x = Tensor::zeros({1}), e = Tensor::zeros({1}), z = Tensor::ones({1});
    const double want = std::sqrt((1 - s.alpha_bar_at(4)) / (1 - s.alpha_bar_at(5)) * s.beta_at(5));
    EXPECT_NEAR(ancestral_step(x, 5, e, s, z, SigmaChoice::PosteriorVariance)[0], want, 1e-15);
    EXPECT_NEAR(ancestral_step(x, 5, e, s, z)[0], std::sqrt(s.beta_at(5)), 1e-15);
}

TEST(DdimStep, RecoversX0AndScalesWithZeroEps) {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(25);
    const Tensor x0 = Tensor::randn({5}, rng), eps = Tensor::randn({5}, rng);
    const Tensor xt = forward_diffuse(x0, 70, eps, s);
    const Tensor back = ddim_step(xt, 70, 0, eps, s);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(back[i], x0[i], 1e-12);

    const Tensor y = ddim_step(xt, 70, 30, Tensor::zeros({5}), s);
    const double r = std::sqrt(s.alpha_bar_at(30) / s.alpha_bar_at(70));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y[i], r * xt[i], 1e-12);

    EXPECT_TRUE(bitwise_equal(ddim_step(xt, 70, 30, eps, s), ddim_step(xt, 70, 30, eps, s)));
    EXPECT_THROW(ddim_step(xt, 30, 30, eps, s), InvalidArgument);
    EXPECT_THROW(ddim_step(xt, 30, 50, eps, s), InvalidArgument);
    EXPECT_THROW(ddim_step(xt, 70, 30, eps, s, 1.0), InvalidArgument);
}

TEST(Samplers, DdimFullEtaOneMatchesAncestralSkeleton) {
    const NoiseSchedule s = make_linear_schedule(200, 1e-4, 0.02);
    Rng rng(26);
    const Tensor start = Tensor::randn({6}, rng);
    const Tensor zero = Tensor::zeros({6});
    Tensor a = start, d = start;
    const auto ts = ddim_timesteps(s.T, s.T);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k], tp = k + 1 < ts.size() ? ts[k + 1] : 0;
        ASSERT_EQ(tp, t - 1);
        a = ancestral_step(a, t, zero, s, zero);
        d = ddim_step(d, t, tp, zero, s, tp > 0 ? 1.0 : 0.0, zero);
    }
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a[i], d[i], 1e-10 * std::max(1.0, std::abs(a[i])));
}

TEST(Samplers, DdimTimesteps) {
    EXPECT_EQ(ddim_timesteps(1000, 4), (std::vector<int>{1000, 750, 500, 250}));
    EXPECT_EQ(ddim_timesteps(5, 5), (std::vector<int>{5, 4, 3, 2, 1}));
    EXPECT_THROW(ddim_timesteps(10, 0), InvalidArgument);
    EXPECT_THROW(ddim_timesteps(10, 11), InvalidArgument);
}

TEST(Cfg, Examples) {
    LabelShift m;
    const Tensor x = Tensor::zeros({2, 1});
    const std::vector<int> t{1, 1}, c{3, 3};
    const Tensor cond = m.forward(x, t, c);
    EXPECT_TRUE(bitwise_equal(cfg_predict(m, x, t, c, {0.0, 9}), cond));
    // eps_c = 1 and eps_u = 0 with w = 3.
    const std::vector<int> one{1, 1};
    const Tensor g = cfg_predict(m, x, t, one, {3.0, 9});
    EXPECT_DOUBLE_EQ(g[0], 4.0);
    // Cond and uncond agree: any w returns the same value.
    const Tensor y = Tensor::full({2, 1}, 0.25);
    const std::vector<int> nul{9, 9};
    EXPECT_DOUBLE_EQ(cfg_predict(m, y, t, nul, {7.5, 9})[0], 0.25);
    EXPECT_THROW(cfg_predict(m, x, t, c, {-1.0, 9}), InvalidArgument);
}

TEST(Sample, PointMassOracleConverges) {
    const NoiseSchedule s = make_linear_schedule(200, 1e-4, 0.05);
    const Tensor target({4}, {0.5, -0.25, 1.0, 0.0});
    PointMassOracle oracle(target, s);
    for (SamplerKind kind : {SamplerKind::Ancestral, SamplerKind::Ddim}) {
        Rng rng(27);
        SamplerConfig cfg;
        cfg.kind = kind;
        cfg.steps = 50;
        const Tensor out = sample(oracle, s, cfg, {8, 4}, rng);
        for (std::size_t n = 0; n < 8; ++n)
            for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(std::abs(out[n * 4 + i] - target[i]), 0.1);
    }
}

TEST(Sample, FiniteAndDeterministic) {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    AffineDenoiser m(0.5, 0.0);
    for (int steps : {100, 10}) {
        SamplerConfig cfg;
        cfg.steps = steps;
        Rng r1(28), r2(28);
        const Tensor a = sample(m, s, cfg, {3, 5}, r1), b = sample(m, s, cfg, {3, 5}, r2);
        EXPECT_TRUE(all_finite(a));
        EXPECT_TRUE(bitwise_equal(a, b));
    }
}

TEST(Sample, TraceRecordsEvenlySpacedSnapshots) {
    const NoiseSchedule s = make_linear_schedule(100, 1e-4, 0.02);
    AffineDenoiser m(0.1, 0.0);
    SamplerConfig cfg;
    cfg.steps = 20;
    SampleTrace trace{5, {}};
    Rng rng(29);
    sample(m, s, cfg, {2, 3}, rng, {}, &trace);
    ASSERT_EQ(trace.snapshots.size(), 5u);
    EXPECT_EQ(trace.snapshots.front().step, 0);
    EXPECT_EQ(trace.snapshots.front().t, 100);
    EXPECT_EQ(trace.snapshots.back().step, 19);
    EXPECT_EQ(trace.snapshots.back().t, 5);
}

TEST(Sample, DivergenceReportsStep) {
    const NoiseSchedule s = make_linear_schedule(10, 1e-4, 0.02);
    AffineDenoiser m(0.0, std::numeric_limits<double>::infinity());
    SamplerConfig cfg;
    cfg.steps = 10;
    Rng rng(30);
    try {
        sample(m, s, cfg, {1, 2}, rng);
        FAIL() << "expected divergence";
    } catch (const NumericalDivergence& e) {
        EXPECT_EQ(e.step, 0);
    }
}

}  // namespace
