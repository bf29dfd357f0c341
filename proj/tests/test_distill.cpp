// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "test_util.hpp"

using namespace sdlab;
using sdlab::testing::bitwise_equal;
using sdlab::testing::grad_check;

namespace {

std::vector<Tensor> snapshot(const ParameterSet& ps) {
    std::vector<Tensor> out;
    for (const auto& p : ps.items()) out.push_back(Tensor(p.value.shape(), {p.value.data().begin(), p.value.data().end()}));
    return out;
}

bool same_values(const ParameterSet& ps, const std::vector<Tensor>& snap) {
    for (std::size_t i = 0; i < snap.size(); ++i)
        if (!bitwise_equal(ps.items()[i].value.detach(), snap[i])) return false;
    return true;
}

Tensor impulse(std::size_t N) {
    std::vector<double> v(N * N, 0.0);
    v[0] = 1.0;
    return Tensor({1, 1, N, N}, v);
}

struct Pair {
    UnetConfig tc, sc;
    WgUnet teacher, student;
    Pair(Rng& rng) : tc(cfg({8, 16})), sc(cfg({4, 8})), teacher(tc, rng), student(sc, rng) {
        teacher.parameters().set_requires_grad(false);
    }
    static UnetConfig cfg(std::vector<std::size_t> w) {
        UnetConfig c;
        c.widths = std::move(w);
        c.time_dim = 8;
        return c;
    }
};

TEST(SpatialLoss, Examples) {
    Rng rng(61);
    const Tensor a = Tensor::randn({2, 3, 4, 4}, rng);
    EXPECT_EQ(spatial_distill_loss({{a, a}}).item(), 0.0);
    const Tensor b = add(a, Tensor::scalar(1.0));
    EXPECT_NEAR(spatial_distill_loss({{b, a}}).item(), 1.0, 1e-12);
    EXPECT_NEAR(spatial_distill_loss({{b, a}, {a, b}}).item(), 2.0, 1e-12);
    EXPECT_THROW(spatial_distill_loss({{a, Tensor::zeros({2, 3, 4, 2})}}), ShapeError);
}

TEST(SpatialLoss, GradientReachesStudentAndAdapters) {
    Rng rng(62);
    Pair p(rng);
    AdapterSet adapters(p.teacher.feature_channels(), p.student.feature_channels(),
                        AdapterSet::same_index_pairs(p.student.feature_channels().size()), rng);
    EXPECT_EQ(adapters.parameters().items().size(), 2u * 2u);  // two width-changing pairs, weight + bias
    const Tensor x = Tensor::randn({1, 1, 4, 4}, rng);
    const std::vector<int> t{50};
    std::vector<Tensor> tf;
    p.teacher.forward_features(x, t, {}, &tf);
    auto loss = [&] {
        std::vector<Tensor> sf;
        p.student.forward_features(x, t, {}, &sf);
        std::vector<std::pair<Tensor, Tensor>> pairs;
        for (std::size_t i = 0; i < adapters.size(); ++i) pairs.emplace_back(tf[i], adapters.apply(i, sf[i]));
        return spatial_distill_loss(pairs);
    };
    const std::vector<Tensor> check{p.student.parameters().get("down0.gate.fc1.weight"),
                                    p.student.parameters().get("in_conv.weight"), adapters.parameters().get("adapter0.weight"),
                                    adapters.parameters().get("adapter1.bias")};
    EXPECT_LT(grad_check(loss, check), 1e-5);
    for (const auto& c : check) EXPECT_TRUE(c.has_grad());
}

TEST(FreqWeight, Examples) {
    // An impulse has a flat unit-magnitude spectrum.
    const Tensor w = freq_weight(impulse(4), 4, 4, -1.0, 1e-12);
    ASSERT_EQ(w.shape(), (Shape{1, 4, 4}));
    for (double v : w.data()) EXPECT_NEAR(v, 1.0, 1e-9);

    const Tensor four = scale(impulse(4), 4.0);
    const Tensor w4 = freq_weight(four, 4, 4, -1.0, 1e-300);
    for (double v : w4.data()) EXPECT_NEAR(v, 0.25, 1e-12);

    const Tensor wz = freq_weight(Tensor::zeros({1, 1, 4, 4}), 4, 4, -1.0, 1e-3);
    for (double v : wz.data()) EXPECT_NEAR(v, 1000.0, 1e-9);

    EXPECT_EQ(freq_weight(Tensor::zeros({3, 2, 8, 8}), 4, 2, -1.0, 1e-3).shape(), (Shape{3, 4, 2}));
    EXPECT_THROW(freq_weight(Tensor::zeros({1, 1, 4, 4}), 8, 4, -1.0, 1e-3), ShapeError);
}

TEST(FreqWeight, SignInvariant) {
    Rng rng(63);
    const Tensor x = Tensor::randn({2, 1, 16, 16}, rng);
    EXPECT_TRUE(bitwise_equal(freq_weight(x, 8, 8, -1.0, 1e-3), freq_weight(scale(x, -1.0), 8, 8, -1.0, 1e-3)));
    EXPECT_TRUE(bitwise_equal(freq_weight(x, 16, 16, -1.0, 1e-3), freq_weight(scale(x, -1.0), 16, 16, -1.0, 1e-3)));
}

TEST(BilinearResize, ConstantAndAverage) {
    const Tensor c = bilinear_resize(Tensor::full({1, 2, 8, 8}, 0.3), 3, 5);
    for (double v : c.data()) EXPECT_NEAR(v, 0.3, 1e-15);
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_NEAR(bilinear_resize(x, 1, 1)[0], 2.5, 1e-15);
}

TEST(FreqLoss, IdenticalFeaturesAreZero) {
    Rng rng(64);
    const Tensor a = Tensor::randn({2, 3, 4, 4}, rng);
    EXPECT_EQ(freq_distill_loss({{a, a}}, Tensor::randn({2, 1, 8, 8}, rng), DistillConfig{}).item(), 0.0);
}

TEST(FreqLoss, HighWeightBinCostsMore) {
    // x0 has strong energy at (0,1) and none at (0,2), so omega is small at
    // (0,1) and large at (0,2).
    std::vector<double> img(16);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) img[i * 4 + j] = std::cos(2 * std::numbers::pi * j / 4.0);
    const Tensor x0({1, 1, 4, 4}, img);
    auto wave = [](std::size_t v) {
        std::vector<double> d(16);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) d[i * 4 + j] = std::cos(2 * std::numbers::pi * v * j / 4.0);
        return Tensor({1, 1, 4, 4}, d);
    };
    const Tensor zero = Tensor::zeros({1, 1, 4, 4});
    // Both differences have the same energy (v = 2 has all of it in one bin).
    const Tensor low = wave(1), high = scale(wave(2), 1.0 / std::sqrt(2.0));
    const DistillConfig cfg;
    const double l_low = freq_distill_loss({{low, zero}}, x0, cfg).item();
    const double l_high = freq_distill_loss({{high, zero}}, x0, cfg).item();
    EXPECT_NEAR(sdlab::testing::rel_error({sum(square(low)).item()}, {sum(square(high)).item()}), 0.0, 1e-12);
    EXPECT_GT(l_high, l_low);
}

TEST(FreqLoss, FlatWeightNormalizedEqualsSpatial) {
    Rng rng(66);
    const Tensor t = Tensor::randn({2, 3, 4, 4}, rng), s = Tensor::randn({2, 3, 4, 4}, rng);
    const Tensor x0 = Tensor::randn({2, 1, 8, 8}, rng);
    DistillConfig cfg;
    cfg.alpha_w = 0.0;
    const double spatial = spatial_distill_loss({{t, s}}).item();
    EXPECT_NEAR(freq_distill_loss({{t, s}}, x0, cfg).item(), spatial, 1e-12 * spatial);
    cfg.normalize = false;
    EXPECT_NEAR(freq_distill_loss({{t, s}}, x0, cfg).item(), 16.0 * spatial, 1e-11 * spatial);
}

TEST(FreqLoss, NormalizedIsInvariantToWeightScale) {
    Rng rng(67);
    const Tensor t = Tensor::randn({1, 2, 4, 4}, rng), s = Tensor::randn({1, 2, 4, 4}, rng);
    const Tensor x0 = Tensor::randn({1, 1, 4, 4}, rng);
    const DistillConfig cfg;
    const double a = freq_distill_loss({{t, s}}, x0, cfg).item();
    const double b = freq_distill_loss({{t, s}}, scale(x0, 10.0), cfg).item();
    EXPECT_NEAR(a, b, 1e-3 * a);
}

TEST(FreqLoss, GradientThroughDft) {
    Rng rng(65);
    Tensor t = sdlab::testing::rand_leaf({1, 4, 4}, rng), s = sdlab::testing::rand_leaf({1, 4, 4}, rng);
    const Tensor x0 = Tensor::randn({1, 1, 8, 8}, rng);
    EXPECT_LT(grad_check([&] { return freq_distill_loss({{t, s}}, x0, DistillConfig{}); }, {t, s}), 1e-6);
}

TEST(DistillStep, ZeroLambdasMatchPlainStepBitwise) {
    Rng init(66);
    Pair a(init);
    Rng init2(66);
    Pair b(init2);
    AdapterSet adapters(a.teacher.feature_channels(), a.student.feature_channels(),
                        AdapterSet::same_index_pairs(a.student.feature_channels().size()), init);
    const NoiseSchedule sched = make_linear_schedule(100, 1e-4, 0.02);
    Rng data(67);
    const Tensor x0 = Tensor::randn({4, 1, 8, 8}, data);
    DistillConfig cfg;
    cfg.lambda_s = cfg.lambda_f = 0.0;
    AdamW opt_a, opt_b;
    Rng ra(68), rb(68);
    for (int step = 0; step < 3; ++step) {
        const DistillLosses l = distill_train_step(a.teacher, a.student, adapters, a.student.parameters(), opt_a, 1e-3, x0,
                                                   {}, sched, cfg, ra);
        Tensor plain = ddpm_loss(b.student, x0, sched, rb);
        const double pv = plain.item();
        plain.backward();
        opt_b.step(b.student.parameters(), 1e-3);
        EXPECT_EQ(std::memcmp(&l.total, &pv, sizeof pv), 0);
        EXPECT_EQ(l.total, l.l_ddpm);
    }
    EXPECT_TRUE(same_values(a.student.parameters(), snapshot(b.student.parameters())));
}

TEST(DistillStep, CopiedWeightsGiveZeroDistillLosses) {
    Rng rng(69);
    UnetConfig c = Pair::cfg({4, 8});
    WgUnet teacher(c, rng), student(c, rng);
    student.parameters().copy_values_from(teacher.parameters());
    teacher.parameters().set_requires_grad(false);
    AdapterSet adapters(teacher.feature_channels(), student.feature_channels(),
                        AdapterSet::same_index_pairs(student.feature_channels().size()), rng);
    EXPECT_EQ(adapters.parameters().items().size(), 0u);
    const NoiseSchedule sched = make_linear_schedule(100, 1e-4, 0.02);
    const Tensor x0 = Tensor::randn({2, 1, 8, 8}, rng);
    const NoisyBatch batch = draw_noisy_batch(x0, sched, rng);
    DistillLosses l;
    distill_objective(teacher, student, adapters, batch, {}, DistillConfig{}, l);
    EXPECT_EQ(l.l_spatial, 0.0);
    EXPECT_EQ(l.l_freq, 0.0);
}

TEST(DistillStep, TeacherFrozenAndLossDecomposes) {
    Rng rng(70);
    Pair p(rng);
    AdapterSet adapters(p.teacher.feature_channels(), p.student.feature_channels(),
                        AdapterSet::same_index_pairs(p.student.feature_channels().size()), rng);
    ParameterSet trainable;
    for (auto& it : p.student.parameters().items()) trainable.add(it.name, it.value);
    for (auto& it : adapters.parameters().items()) trainable.add("adapter/" + it.name, it.value);
    const auto before = snapshot(p.teacher.parameters());
    const NoiseSchedule sched = make_linear_schedule(100, 1e-4, 0.02);
    const Tensor x0 = Tensor::randn({4, 1, 8, 8}, rng);
    AdamW opt;
    const DistillConfig cfg;
    const auto adapter_before = snapshot(adapters.parameters());
    for (int step = 0; step < 5; ++step) {
        const DistillLosses l = distill_train_step(p.teacher, p.student, adapters, trainable, opt, 1e-3, x0, {}, sched, cfg, rng);
        EXPECT_GT(l.l_spatial, 0.0);
        EXPECT_GT(l.l_freq, 0.0);
        EXPECT_NEAR(l.total - (l.l_ddpm + 0.1 * l.l_spatial + 0.1 * l.l_freq), 0.0, 1e-12);
    }
    EXPECT_TRUE(same_values(p.teacher.parameters(), before));
    EXPECT_FALSE(same_values(adapters.parameters(), adapter_before));
}

TEST(DistillConfig, Validation) {
    DistillConfig c;
    EXPECT_NO_THROW(c.validate());
    c.alpha_w = 0.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.eps_w = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.lambda_f = -1;
    EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
