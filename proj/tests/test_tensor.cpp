// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace sdlab;
using sdlab::testing::grad_check;
using sdlab::testing::probe;
using sdlab::testing::rand_leaf;

namespace {

constexpr double kGradTol = 1e-4;

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    Tensor t({2, 3}, std::vector<double>(6, 1.0));
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rank(), 2u);
}

TEST(Tensor, SigmoidOfZeroIsHalf) { EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5); }

TEST(Tensor, AddVectors) {
    const Tensor c = add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}));
    EXPECT_EQ(c.values(), (std::vector<double>{4, 6}));
}

TEST(Tensor, MulGradientAtThreeFour) {
    Tensor a = Tensor::scalar(3.0, true), b = Tensor::scalar(4.0, true);
    mul(a, b).backward();
    EXPECT_NEAR(a.grad()[0], 4.0, 1e-12);
    EXPECT_NEAR(b.grad()[0], 3.0, 1e-12);
    EXPECT_LT(grad_check([&] { return mul(a, b); }, {a, b}), kGradTol);
}

TEST(Tensor, ShapeMismatchNamesBothShapes) {
    try {
        add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[3,2]"), std::string::npos);
    }
}

TEST(Tensor, TrailingSingletonBroadcast) {
    const Tensor a({2, 2, 1, 1}, {1, 2, 3, 4});
    const Tensor x = Tensor::ones({2, 2, 2, 2});
    const Tensor y = mul(x, a);
    EXPECT_DOUBLE_EQ(y[0], 1.0);
    EXPECT_DOUBLE_EQ(y[4], 2.0);
    EXPECT_DOUBLE_EQ(y[15], 4.0);
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3})), ShapeError);
}

TEST(Tensor, ElementwiseGradients) {
    Rng rng(1);
    Tensor a = rand_leaf({3, 4}, rng), b = rand_leaf({3, 4}, rng), c = rand_leaf({3, 1}, rng);
    EXPECT_LT(grad_check([&] { return probe(add(a, b)); }, {a, b}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(sub(a, c)); }, {a, c}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(mul(a, c)); }, {a, c}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(scale(a, -1.7)); }, {a}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(square(a)); }, {a}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(sigmoid(a)); }, {a}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(silu(a)); }, {a}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(relu(a)); }, {a}), kGradTol);
    EXPECT_LT(grad_check([&] { return mean(a); }, {a}), kGradTol);
    EXPECT_LT(grad_check([&] { return mse(a, b); }, {a, b}), kGradTol);
}

TEST(Tensor, ShapingGradients) {
    Rng rng(2);
    Tensor a = rand_leaf({2, 3, 4}, rng), b = rand_leaf({2, 2, 4}, rng), table = rand_leaf({5, 3}, rng);
    EXPECT_LT(grad_check([&] { return probe(reshape(a, {6, 4})); }, {a}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(slice(a, 1, 1, 2)); }, {a}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(concat({a, b}, 1)); }, {a, b}), kGradTol);
    const std::vector<int> idx{4, 0, 4, 2};
    EXPECT_LT(grad_check([&] { return probe(gather_rows(table, idx)); }, {table}), kGradTol);
}

TEST(Tensor, MatmulIdentity) {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(matmul(eye, x).values(), x.values());
}

TEST(Tensor, MatmulByOnesColumn) {
    const Tensor y = matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {1, 1}));
    EXPECT_EQ(y.shape(), (Shape{2, 1}));
    EXPECT_EQ(y.values(), (std::vector<double>{3, 7}));
}

TEST(Tensor, MatmulGradientAndErrors) {
    Rng rng(3);
    Tensor a = rand_leaf({4, 3}, rng), b = rand_leaf({3, 2}, rng), bias = rand_leaf({2}, rng);
    EXPECT_LT(grad_check([&] { return probe(matmul(a, b)); }, {a, b}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(linear(a, b, bias)); }, {a, b, bias}), kGradTol);
    EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Tensor, Conv1x1UnitWeightIsIdentity) {
    Rng rng(4);
    const Tensor x = Tensor::randn({1, 5, 5}, rng);
    const Tensor y = conv2d(x, Tensor::ones({1, 1, 1, 1}));
    EXPECT_EQ(y.values(), x.values());
}

TEST(Tensor, Conv3x3OnesOnConstantInterior) {
    const double c = 1.25;
    const Tensor y = conv2d(Tensor::full({1, 6, 6}, c), Tensor::ones({1, 1, 3, 3}), std::nullopt, 1, 1);
    ASSERT_EQ(y.shape(), (Shape{1, 6, 6}));
    for (std::size_t i = 1; i < 5; ++i)
        for (std::size_t j = 1; j < 5; ++j) EXPECT_DOUBLE_EQ(y[i * 6 + j], 9 * c);
    EXPECT_DOUBLE_EQ(y[0], 4 * c);  // corner sees a 2x2 window
}

TEST(Tensor, ConvOutputSizeFormula) {
    const Tensor y = conv2d(Tensor::zeros({2, 3, 9, 7}), Tensor::zeros({4, 3, 3, 3}), std::nullopt, 2, 1);
    EXPECT_EQ(y.shape(), (Shape{2, 4, 5, 4}));
    EXPECT_THROW(conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 2, 2})), ShapeError);
    EXPECT_THROW(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 1, 3, 3})), ShapeError);
}

TEST(Tensor, ConvGradients) {
    Rng rng(5);
    Tensor x = rand_leaf({1, 4, 4}, rng), w = rand_leaf({2, 1, 3, 3}, rng), b = rand_leaf({2}, rng);
    EXPECT_LT(grad_check([&] { return probe(conv2d(x, w, b, 1, 1)); }, {x, w, b}), kGradTol);
    Tensor xb = rand_leaf({2, 3, 6, 6}, rng), wb = rand_leaf({2, 3, 3, 3}, rng);
    EXPECT_LT(grad_check([&] { return probe(conv2d(xb, wb, std::nullopt, 2, 1)); }, {xb, wb}), kGradTol);
    Tensor w1 = rand_leaf({4, 3, 1, 1}, rng);
    EXPECT_LT(grad_check([&] { return probe(conv2d(xb, w1)); }, {xb, w1}), kGradTol);
}

TEST(Tensor, AvgpoolConstantAndSmall) {
    EXPECT_DOUBLE_EQ(avgpool_global(Tensor::full({1, 3, 3}, 2.5))[0], 2.5);
    EXPECT_DOUBLE_EQ(avgpool_global(Tensor({1, 2, 2}, {1, 3, 5, 7}))[0], 4.0);
}

TEST(Tensor, AvgpoolGradientIsUniform) {
    Tensor x = Tensor({1, 2, 3}, {1, 2, 3, 4, 5, 6}, true);
    sum(avgpool_global(x)).backward();
    for (double g : x.grad()) EXPECT_NEAR(g, 1.0 / 6.0, 1e-15);
    Rng rng(6);
    Tensor xb = rand_leaf({2, 3, 4, 4}, rng);
    EXPECT_LT(grad_check([&] { return probe(avgpool_global(xb)); }, {xb}), kGradTol);
    EXPECT_LT(grad_check([&] { return probe(upsample_nearest2x(xb)); }, {xb}), kGradTol);
}

TEST(Tensor, BackwardOfSumIsOnes) {
    Tensor x = Tensor::zeros({2, 3, 2}, true);
    sum(x).backward();
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tensor, BackwardOfHalfSquaredNormIsX) {
    Rng rng(7);
    Tensor x = rand_leaf({5}, rng);
    scale(sum(square(x)), 0.5).backward();
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(x.grad()[i], x[i], 1e-15);
}

TEST(Tensor, BackwardAccumulatesAndRejectsNonScalar) {
    Tensor x = Tensor::ones({3}, true);
    const Tensor loss = sum(x);
    loss.backward();
    loss.backward();
    for (double g : x.grad()) EXPECT_EQ(g, 2.0);
    EXPECT_THROW(add(x, x).backward(), ShapeError);
}

TEST(Tensor, CompositeMlpGradient) {
    Rng rng(8);
    Tensor x = rand_leaf({4, 3}, rng), w1 = rand_leaf({3, 5}, rng), b1 = rand_leaf({5}, rng);
    Tensor w2 = rand_leaf({5, 2}, rng), b2 = rand_leaf({2}, rng), y = rand_leaf({4, 2}, rng);
    auto f = [&] { return mse(linear(silu(linear(x, w1, b1)), w2, b2), y); };
    EXPECT_LT(grad_check(f, {x, w1, b1, w2, b2}), kGradTol);
}

TEST(Tensor, BackwardIsLinear) {
    Rng rng(9);
    Tensor x = rand_leaf({6}, rng);
    auto f = [&] { return sum(sigmoid(x)); };
    auto g = [&] { return sum(square(x)); };
    x.zero_grad();
    f().backward();
    const std::vector<double> gf(x.grad().begin(), x.grad().end());
    x.zero_grad();
    g().backward();
    const std::vector<double> gg(x.grad().begin(), x.grad().end());
    x.zero_grad();
    add(scale(f(), 2.0), scale(g(), -3.0)).backward();
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(x.grad()[i], 2.0 * gf[i] - 3.0 * gg[i], 1e-12);
}

TEST(Tensor, NoGradGuardSkipsGraph) {
    Tensor x = Tensor::ones({2}, true);
    Tensor y;
    {
        NoGradGuard ng;
        y = mul(x, x);
    }
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
    EXPECT_TRUE(grad_enabled());
}

TEST(Tensor, NonFiniteIsDetectable) {
    EXPECT_TRUE(all_finite(Tensor({2}, {1.0, -3.0})));
    EXPECT_FALSE(all_finite(Tensor({2}, {1.0, std::nan("")})));
    EXPECT_FALSE(all_finite(Tensor({1}, {INFINITY})));
}

// ------------------------------------------------------------------ AdamW

TEST(AdamW, ZeroGradNoDecayLeavesParams) {
    std::vector<double> p{1.5, -2.0};
    const std::vector<double> g{0.0, 0.0};
    AdamMoments st;
    adamw_step(p, g, st, 1, {0.1, 0.9, 0.999, 1e-8, 0.0});
    EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
}

TEST(AdamW, FirstStepIsSignedLr) {
    for (double g0 : {0.37, -12.0}) {
        std::vector<double> p{0.0};
        const std::vector<double> g{g0};
        AdamMoments st;
        adamw_step(p, g, st, 1, {0.01, 0.9, 0.999, 0.0, 0.0});
        EXPECT_NEAR(p[0], -0.01 * (g0 > 0 ? 1.0 : -1.0), 1e-15);
    }
}

TEST(AdamW, DecoupledDecayShrinksParam) {
    std::vector<double> p{2.0};
    const std::vector<double> g{0.0};
    AdamMoments st;
    adamw_step(p, g, st, 1, {0.01, 0.9, 0.999, 1e-8, 0.1});
    EXPECT_NEAR(p[0], 2.0 * (1.0 - 0.001), 1e-15);
}

TEST(AdamW, OptimizerStepsByName) {
    ParameterSet ps;
    Tensor w = ps.add("w", Tensor::full({2}, 1.0));
    EXPECT_THROW(ps.add("w", Tensor::zeros({1})), InvalidArgument);
    AdamW opt({0.1});
    sum(w).backward();
    opt.step(ps, 0.1);
    EXPECT_NEAR(w[0], 0.9, 1e-9);
    EXPECT_FALSE(w.has_grad());
    EXPECT_EQ(opt.steps(), 1);
    EXPECT_EQ(opt.moments().count("w"), 1u);
}

TEST(AdamW, LinearDecay) {
    EXPECT_DOUBLE_EQ(linear_decay_lr(1.0, 0, 10), 1.0);
    EXPECT_DOUBLE_EQ(linear_decay_lr(1.0, 5, 10), 0.5);
    EXPECT_DOUBLE_EQ(linear_decay_lr(2.0, 3, 0), 2.0);
}

TEST(Determinism, SameSeedSameTrajectory) {
    auto run = [] {
        Rng rng(42);
        ParameterSet ps;
        Tensor w = ps.add("w", Tensor::randn({3, 2}, rng));
        AdamW opt({0.05});
        for (int i = 0; i < 20; ++i) {
            const Tensor x = Tensor::randn({4, 3}, rng);
            mse(matmul(x, w), Tensor::ones({4, 2})).backward();
            opt.step(ps, 0.05);
        }
        return w.values();
    };
    EXPECT_EQ(run(), run());
}

TEST(Rng, StateRoundTrip) {
    Rng a(5, 2);
    a.normal();
    const std::string s = a.state();
    const double x = a.normal(), y = a.uniform();
    Rng b;
    b.restore(s);
    EXPECT_EQ(b.normal(), x);
    EXPECT_EQ(b.uniform(), y);
}

}  // namespace
