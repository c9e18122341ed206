// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "gradcheck.hpp"

#include "occfield/diffcore/ops.hpp"
#include "occfield/diffcore/optim.hpp"
#include "occfield/errors.hpp"
#include "occfield/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

using namespace occ;
using diff::Tensor;

namespace {

void expect_values(const Tensor& t, std::initializer_list<double> expected, double tol = 1e-12) {
    ASSERT_EQ(static_cast<std::size_t>(t.numel()), expected.size());
    std::size_t i = 0;
    for (const double e : expected) {
        EXPECT_NEAR(t.at(static_cast<std::int64_t>(i)), e, tol) << "element " << i;
        ++i;
    }
}

} // namespace

TEST(Ops, SigmoidOfZeroIsHalf) {
    expect_values(diff::sigmoid(Tensor::zeros({2, 3})), {0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
}

TEST(Ops, SoftmaxOfUniformLogits) {
    expect_values(diff::softmax_lastdim(Tensor::zeros({1, 3})), {1.0 / 3, 1.0 / 3, 1.0 / 3});
}

TEST(Ops, BilinearAtGridCenter) {
    // [[0,0],[1,1]]: rows are y.
    const Tensor grid = Tensor::from({1, 2, 2}, {0, 0, 1, 1});
    expect_values(diff::bilinear_sample_2d(grid, Tensor::from({1, 2}, {0.0, 0.0})), {0.5});
}

TEST(Ops, BilinearCornersHitGridNodes) {
    const Tensor grid = Tensor::from({1, 2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor coords = Tensor::from({4, 2}, {-1, -1, 1, -1, -1, 1, 1, 1});
    expect_values(diff::bilinear_sample_2d(grid, coords), {1, 3, 4, 6});
}

TEST(Ops, BilinearRejectsOutOfRange) {
    const Tensor grid = Tensor::zeros({1, 2, 2});
    EXPECT_THROW(diff::bilinear_sample_2d(grid, Tensor::from({1, 2}, {1.01, 0.0})), OutOfRangeError);
}

TEST(Ops, MatmulMatchesHandLoop) {
    Rng rng(3);
    std::vector<double> a(12), b(20);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    const auto c = diff::matmul(Tensor::from({3, 4}, a), Tensor::from({4, 5}, b));
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 5; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) {
                s += a[static_cast<std::size_t>(i * 4 + k)] * b[static_cast<std::size_t>(k * 5 + j)];
            }
            EXPECT_NEAR(c.at(i * 5 + j), s, 1e-12);
        }
    }
}

TEST(Ops, LayerNormMatchesHandComputation) {
    const Tensor x = Tensor::from({1, 4}, {1, 2, 3, 6});
    const auto y = diff::layer_norm(x, Tensor::full({4}, 2.0), Tensor::full({4}, 0.5), 0.0);
    const double mu = 3.0;
    const double sd = std::sqrt((4.0 + 1.0 + 0.0 + 9.0) / 4.0);
    expect_values(y, {2 * (1 - mu) / sd + 0.5, 2 * (2 - mu) / sd + 0.5, 0.5, 2 * (6 - mu) / sd + 0.5});
}

TEST(Ops, GeluUsesErf) {
    const auto y = diff::gelu(Tensor::from({3}, {-1.0, 0.0, 2.0}));
    auto g = [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); };
    expect_values(y, {g(-1.0), 0.0, g(2.0)});
}

TEST(Ops, BceFromLogitsIsStableForLargeMagnitudes) {
    const auto l = diff::bce(Tensor::from({2, 1}, {800.0, -800.0}), Tensor::from({2, 1}, {1.0, 0.0}));
    EXPECT_NEAR(l.item(), 0.0, 1e-300);
    const auto bad = diff::bce(Tensor::from({1, 1}, {-800.0}), Tensor::from({1, 1}, {1.0}));
    EXPECT_NEAR(bad.item(), 800.0, 1e-9);
}

TEST(Ops, GatherRowsPadsWithZeros) {
    const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    const std::vector<std::int64_t> rows{1, -1, 0};
    expect_values(diff::gather_rows(a, rows), {3, 4, 0, 0, 1, 2});
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
    try {
        diff::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("matmul"), std::string::npos);
        EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    }
    EXPECT_THROW(diff::add(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
    EXPECT_THROW(diff::mul(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST(Ops, ForwardOpDispatchMatchesDirectCalls) {
    const Tensor a = Tensor::from({2, 2}, {1, -2, 3, -4});
    const std::vector<Tensor> in{a};
    expect_values(diff::forward_op(diff::OpKind::relu, in), {1, 0, 3, 0});
    const std::vector<Tensor> sc{a, Tensor::scalar(2.0)};
    expect_values(diff::forward_op(diff::OpKind::scale, sc), {2, -4, 6, -8});
    const std::vector<Tensor> tr{a};
    expect_values(diff::forward_op(diff::OpKind::transpose_2d, tr), {1, 3, -2, -4});
}

TEST(Backward, MeanOfSquares) {
    const Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    diff::backward(diff::mean(diff::mul(x, x)));
    const auto g = x.grad();
    ASSERT_EQ(g.size(), 3u);
    EXPECT_NEAR(g[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(g[1], 4.0 / 3.0, 1e-15);
    EXPECT_NEAR(g[2], 2.0, 1e-15);
}

TEST(Backward, ConstantGraphWritesNoGrad) {
    const Tensor c = Tensor::from({3}, {1, 2, 3});
    diff::backward(diff::mean(c));
    EXPECT_FALSE(c.has_grad());
}

TEST(Backward, UnreachableLeafStaysZero) {
    const Tensor x = Tensor::from({2}, {1, 2}, true);
    const Tensor unused = Tensor::from({2}, {3, 4}, true);
    diff::backward(diff::mean(x));
    for (const double g : unused.grad()) {
        EXPECT_EQ(g, 0.0);
    }
}

TEST(Backward, NonScalarLossIsContractError) {
    const Tensor x = Tensor::from({2}, {1, 2}, true);
    EXPECT_THROW(diff::backward(diff::scale(x, 2.0)), ContractError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
    const Tensor x = Tensor::from({1}, {3.0}, true);
    const Tensor y = diff::mul(x, x);
    diff::backward(diff::mean(diff::add(y, y)));
    EXPECT_NEAR(x.grad()[0], 12.0, 1e-15);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    const Tensor x = Tensor::from({2}, {1, 2}, true);
    diff::NoGradGuard guard;
    EXPECT_FALSE(diff::mean(x).requires_grad());
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesFiniteDifferencesOver100Seeds) {
    const auto cases = occ::testing::op_cases();
    const auto& c = cases[GetParam()];
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto r = c.run(seed);
        ASSERT_GT(r.checked, 0u);
        ASSERT_LT(r.max_rel_error, 1e-4) << c.name << " seed " << seed << " at " << r.worst;
    }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, occ::testing::op_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                             return occ::testing::op_cases()[info.param].name;
                         });

TEST(ModelGradient, TinyModelEndToEnd) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto r = occ::testing::tiny_model_check(seed);
        EXPECT_LT(r.max_rel_error, 1e-3) << "seed " << seed << " at " << r.worst;
    }
}

// ---- optimizer -------------------------------------------------------------

TEST(Schedule, WarmupStartsAtZeroAndCosineEndsAtZero) {
    diff::AdamWConfig cfg;
    cfg.peak_lr = 1e-3;
    cfg.warmup_steps = 10;
    cfg.total_steps = 110;
    EXPECT_EQ(diff::scheduled_lr(cfg, 0), 0.0);
    EXPECT_NEAR(diff::scheduled_lr(cfg, 5), 5e-4, 1e-18);
    EXPECT_NEAR(diff::scheduled_lr(cfg, 10), 1e-3, 1e-18);
    EXPECT_NEAR(diff::scheduled_lr(cfg, 60), 5e-4, 1e-15);
    EXPECT_NEAR(diff::scheduled_lr(cfg, 110), 0.0, 1e-18);
    for (std::int64_t s = 10; s < 110; ++s) {
        EXPECT_GE(diff::scheduled_lr(cfg, s), diff::scheduled_lr(cfg, s + 1));
    }
}

TEST(Clip, NormFiveScaledByOneFifth) {
    diff::NamedParameters p{{"a", Tensor::from({2}, {0, 0}, true)}};
    p[0].second.mutable_grad();
    auto g = p[0].second.mutable_grad();
    g[0] = 3.0;
    g[1] = 4.0;
    EXPECT_DOUBLE_EQ(diff::clip_grad_norm(p, 1.0), 5.0);
    EXPECT_NEAR(p[0].second.grad()[0], 0.6, 1e-15);
    EXPECT_NEAR(p[0].second.grad()[1], 0.8, 1e-15);
}

TEST(Clip, PreservesDirectionAndBoundsNorm) {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        diff::NamedParameters p{{"a", Tensor::zeros({3, 2}, true)}, {"b", Tensor::zeros({4}, true)}};
        std::vector<double> before;
        const double scale = rng.uniform(0.01, 20.0);
        for (auto& [name, t] : p) {
            for (auto& g : t.mutable_grad()) {
                g = scale * rng.normal();
                before.push_back(g);
            }
        }
        const double pre = diff::clip_grad_norm(p, 1.0);
        EXPECT_LE(diff::global_grad_norm(p), 1.0 + 1e-9);
        const double k = pre > 1.0 ? 1.0 / pre : 1.0;
        std::size_t i = 0;
        for (auto& [name, t] : p) {
            for (const double g : t.grad()) {
                EXPECT_NEAR(g, k * before[i++], 1e-12);
            }
        }
    }
}

TEST(AdamW, SingleStepMatchesHandUpdate) {
    diff::AdamWConfig cfg;
    cfg.peak_lr = 0.1;
    cfg.warmup_steps = 0;
    cfg.total_steps = 1000;
    cfg.weight_decay = 0.5;
    cfg.clip_norm = 100.0;
    diff::NamedParameters p{{"w", Tensor::from({2}, {1.0, -2.0}, true)}};
    auto g = p[0].second.mutable_grad();
    g[0] = 0.3;
    g[1] = -0.4;
    diff::AdamW opt(cfg);
    const auto stats = opt.step(p);
    // First step: m_hat = g, v_hat = g^2, so the Adam term is g/(|g|+eps).
    const double lr = 0.1;
    const double w0 = 1.0 - lr * (0.3 / (0.3 + 1e-8) + 0.5 * 1.0);
    const double w1 = -2.0 - lr * (-0.4 / (0.4 + 1e-8) + 0.5 * -2.0);
    EXPECT_NEAR(p[0].second.at(0), w0, 1e-14);
    EXPECT_NEAR(p[0].second.at(1), w1, 1e-14);
    EXPECT_DOUBLE_EQ(stats.lr, lr);
    EXPECT_EQ(opt.step_count(), 1);
    for (const double v : p[0].second.grad()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(AdamW, DecayIsDecoupledFromGradient) {
    // Zero gradient: only the decay term moves the weight.
    diff::AdamWConfig cfg;
    cfg.peak_lr = 0.01;
    cfg.warmup_steps = 0;
    cfg.weight_decay = 0.1;
    diff::NamedParameters p{{"w", Tensor::from({1}, {2.0}, true)}};
    p[0].second.mutable_grad();
    diff::AdamW opt(cfg);
    opt.step(p);
    EXPECT_NEAR(p[0].second.at(0), 2.0 - 0.01 * 0.1 * 2.0, 1e-15);
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
    diff::NamedParameters p{{"good", Tensor::zeros({1}, true)}, {"bad", Tensor::zeros({2}, true)}};
    p[0].second.mutable_grad();
    p[1].second.mutable_grad()[1] = std::numeric_limits<double>::quiet_NaN();
    diff::AdamW opt(diff::AdamWConfig{});
    try {
        opt.step(p);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
    }
}

TEST(AdamW, ReplayIsBitIdentical) {
    auto run = [] {
        Rng rng(5);
        diff::NamedParameters p{{"w", Tensor::from({4}, {0.1, 0.2, 0.3, 0.4}, true)}};
        diff::AdamW opt(diff::AdamWConfig{});
        for (int s = 0; s < 50; ++s) {
            for (auto& g : p[0].second.mutable_grad()) {
                g = rng.normal();
            }
            opt.step(p);
        }
        const auto d = p[0].second.data();
        return std::vector<double>(d.begin(), d.end());
    };
    EXPECT_EQ(run(), run());
}
