#include "auxq/errors.hpp"
#include "auxq/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace auxq;

namespace {

std::vector<Parameter<double>> scalar_param(double v)
{
    return {{"w", Tensor<double>(Shape{1}, {v})}};
}

GradientMap<double> grad(double g)
{
    return {{"w", Tensor<double>(Shape{1}, {g})}};
}

}  // namespace

TEST(Adam, SingleStepMatchesClosedForm)
{
    // loss = (w - 3)^2 at w = 1: g = -4. After one step m_hat = g, v_hat = g^2.
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::Adam;
    Optimizer<double> opt(cfg);
    auto params = scalar_param(1.0);
    const double g = 2 * (1.0 - 3.0);
    opt.step(params, grad(g), 0.01);
    const double m_hat = ((1 - 0.9) * g) / (1 - 0.9);
    const double v_hat = ((1 - 0.999) * g * g) / (1 - 0.999);
    EXPECT_NEAR(params[0].value[0], 1.0 - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8), 1e-12);
}

TEST(Adam, TwoStepsAgainstRecurrence)
{
    OptimizerConfig cfg;
    cfg.beta1 = 0.8;
    cfg.beta2 = 0.99;
    cfg.eps = 1e-6;
    Optimizer<double> opt(cfg);
    auto params = scalar_param(0.5);
    double w = 0.5, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
        const double g = std::sin(3 * w);
        opt.step(params, grad(g), 0.1);
        m = 0.8 * m + 0.2 * g;
        v = 0.99 * v + 0.01 * g * g;
        w -= 0.1 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.99, t))) + 1e-6);
        EXPECT_NEAR(params[0].value[0], w, 1e-12);
    }
    EXPECT_EQ(opt.state().at("w").step, 2u);
}

TEST(Sgd, HeavyBallMomentum)
{
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::Sgd;
    cfg.momentum = 0.5;
    Optimizer<double> opt(cfg);
    auto params = scalar_param(1.0);
    opt.step(params, grad(2.0), 0.1);  // buf = 2
    EXPECT_DOUBLE_EQ(params[0].value[0], 1.0 - 0.2);
    opt.step(params, grad(1.0), 0.1);  // buf = 0.5 * 2 + 1 = 2
    EXPECT_DOUBLE_EQ(params[0].value[0], 0.8 - 0.2);
}

TEST(Sgd, WeightDecayAddsToGradient)
{
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::Sgd;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.1;
    Optimizer<double> opt(cfg);
    auto params = scalar_param(2.0);
    opt.step(params, grad(1.0), 0.5);
    EXPECT_DOUBLE_EQ(params[0].value[0], 2.0 - 0.5 * (1.0 + 0.2));
}

TEST(Optimizer, AbsentGradientsLeaveParameterAndSlotAlone)
{
    Optimizer<double> opt(OptimizerConfig{});
    std::vector<Parameter<double>> params = {{"a", Tensor<double>(Shape{2}, 1.0)}, {"b", Tensor<double>(Shape{2}, 1.0)}};
    opt.step(params, {{"a", Tensor<double>(Shape{2}, 1.0)}}, 0.1);
    EXPECT_NE(params[0].value[0], 1.0);
    EXPECT_EQ(params[1].value[0], 1.0);
    EXPECT_FALSE(opt.state().count("b"));
}

TEST(Optimizer, ZeroLearningRateIsANoOp)
{
    for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
        OptimizerConfig cfg;
        cfg.kind = kind;
        Optimizer<double> opt(cfg);
        auto params = scalar_param(0.123);
        opt.step(params, grad(7.0), 0.0);
        EXPECT_EQ(params[0].value[0], 0.123);
    }
}

TEST(Optimizer, StateRoundTripContinuesIdentically)
{
    Optimizer<double> a(OptimizerConfig{});
    auto pa = scalar_param(1.0);
    a.step(pa, grad(0.3), 0.01);
    Optimizer<double> b(OptimizerConfig{});
    b.load_state(a.state());
    auto pb = pa;
    a.step(pa, grad(-0.2), 0.01);
    b.step(pb, grad(-0.2), 0.01);
    EXPECT_EQ(pa[0].value[0], pb[0].value[0]);
}

TEST(Optimizer, ShapeMismatchAndValidation)
{
    Optimizer<double> opt(OptimizerConfig{});
    auto params = scalar_param(1.0);
    EXPECT_THROW(opt.step(params, {{"w", Tensor<double>(Shape{2})}}, 0.1), ShapeError);
    OptimizerConfig bad;
    bad.lr = -1;
    bad.beta2 = 1.0;
    bad.weight_decay = -0.1;
    EXPECT_GE(bad.validate().size(), 3u);
    EXPECT_THROW(Optimizer<double>{bad}, ValidationError);
    EXPECT_EQ(parse_optimizer("sgd"), OptimizerKind::Sgd);
    EXPECT_THROW(parse_optimizer("rmsprop"), UsageError);
}

TEST(LrScheduleTest, StepDecay)
{
    LrSchedule s{0.1, {3, 6}};
    EXPECT_DOUBLE_EQ(s.at(0), 0.1);
    EXPECT_DOUBLE_EQ(s.at(2), 0.1);
    EXPECT_NEAR(s.at(3), 0.01, 1e-15);
    EXPECT_NEAR(s.at(5), 0.01, 1e-15);
    EXPECT_NEAR(s.at(6), 0.001, 1e-15);
    EXPECT_TRUE(s.validate(10).empty());
    EXPECT_FALSE(s.validate(6).empty());
    EXPECT_FALSE((LrSchedule{0.1, {4, 4}}).validate(10).empty());
    EXPECT_FALSE((LrSchedule{0.1, {5, 2}}).validate(10).empty());
}
