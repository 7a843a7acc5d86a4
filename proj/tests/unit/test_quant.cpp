#include "auxq/errors.hpp"
#include "auxq/quant.hpp"
#include "testing.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace auxq;
using auxq::testing::random_tensor;

namespace {

// Nearest grid point by enumeration; ties go to the larger level (x >= 0).
double nearest_level(double x, int k)
{
    const double n = std::pow(2.0, k) - 1;
    double best = 0, dist = 1e9;
    for (int i = 0; i <= static_cast<int>(n); ++i) {
        const double d = std::abs(x - i / n);
        if (d < dist - 1e-15 || std::abs(d - dist) <= 1e-15) {
            best = i / n;
            dist = d;
        }
    }
    return best;
}

Tensor<double> run_unit(const Tensor<double>& x, int k)
{
    Tape<double> tape;
    return quant::quantize_unit(tape.constant(x), k).value();
}

Tensor<double> grad_of(const Tensor<double>& x, const std::function<Var<double>(Var<double>)>& f,
                       Tensor<double>* out = nullptr)
{
    Parameter<double> p{"x", x};
    Tape<double> tape;
    auto y = f(tape.parameter(p));
    if (out) *out = y.value();
    auto g = tape.backward(ops::sum(y));
    auto it = g.find("x");
    return it == g.end() ? Tensor<double>(x.shape()) : it->second;
}

bool on_grid(double v, int k)
{
    const double n = std::pow(2.0, k) - 1;
    const double i = std::round(v * n);
    return i >= 0 && i <= n && i / n == v;
}

}  // namespace

TEST(QuantScheme, ParseAndPrint)
{
    EXPECT_EQ(QuantScheme::uniform(2).str(), "UniformK(2)");
    EXPECT_EQ(QuantScheme::full().str(), "Full");
    EXPECT_EQ(QuantScheme::binary().str(), "Binary");
    for (auto s : {QuantScheme::full(), QuantScheme::binary(), QuantScheme::uniform(1), QuantScheme::uniform(8)})
        EXPECT_EQ(QuantScheme::parse(s.str()), s);
    EXPECT_THROW(QuantScheme::uniform(0), UsageError);
    EXPECT_THROW(QuantScheme::parse("UniformK(x)"), UsageError);
}

TEST(QuantScheme, StandardPolicy)
{
    const auto p = PrecisionPolicy::standard(QuantScheme::uniform(2));
    EXPECT_EQ(p.first_layer, QuantScheme::uniform(8));
    EXPECT_EQ(p.last_layer, QuantScheme::uniform(8));
    EXPECT_EQ(p.interior, QuantScheme::uniform(2));
    EXPECT_FALSE(p.is_full());
    EXPECT_TRUE(PrecisionPolicy::full().is_full());
}

TEST(QuantizeUnit, Endpoints)
{
    for (int k = 1; k <= 8; ++k) {
        const auto y = run_unit(Tensor<double>(Shape{2}, {0.0, 1.0}), k);
        EXPECT_EQ(y[0], 0.0);
        EXPECT_EQ(y[1], 1.0);
    }
}

TEST(QuantizeUnit, HalfRoundsAwayFromZero)
{
    EXPECT_EQ(run_unit(Tensor<double>(Shape{1}, {0.5}), 2)[0], nearest_level(0.5, 2));
    EXPECT_DOUBLE_EQ(run_unit(Tensor<double>(Shape{1}, {0.5}), 2)[0], 2.0 / 3.0);
}

TEST(QuantizeUnit, MatchesEnumerationIdempotentAndExactGrid)
{
    auto rng = make_stream(11, "unit");
    for (int k = 1; k <= 8; ++k) {
        Tensor<double> x(Shape{10000});
        for (auto& v : x.data()) v = uniform01(rng);
        const auto y = run_unit(x, k);
        const auto yy = run_unit(y, k);
        EXPECT_TRUE(bit_equal(y, yy)) << "k=" << k;
        std::set<double> levels;
        for (std::size_t i = 0; i < x.size(); ++i) {
            ASSERT_NEAR(y[i], nearest_level(x[i], k), 1e-15) << x[i];
            ASSERT_TRUE(on_grid(y[i], k)) << y[i];
            levels.insert(y[i]);
        }
        if (k <= 4) {
            EXPECT_EQ(levels.size(), std::size_t(1) << k);
        }
    }
}

TEST(QuantizeUnit, IdentityStraightThrough)
{
    auto rng = make_stream(12, "unit-ste");
    Tensor<double> x(Shape{50});
    for (auto& v : x.data()) v = uniform01(rng);
    const auto g = grad_of(x, [](Var<double> v) { return quant::quantize_unit(v, 3); });
    for (double v : g.values()) EXPECT_EQ(v, 1.0);
}

TEST(QuantizeWeight, ZerosTakeTheDegenerateBranch)
{
    Tensor<double> out;
    const auto g = grad_of(Tensor<double>(Shape{3, 2}), [](Var<double> v) { return quant::quantize_weight(v, 2); }, &out);
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(QuantizeWeight, SymmetricPairAtOneBit)
{
    for (double t : {1e-3, 0.4, 3.0}) {
        Tape<double> tape;
        auto y = quant::quantize_weight(tape.constant(Tensor<double>(Shape{2}, {-t, t})), 1);
        EXPECT_EQ(y.value()[0], -1.0);
        EXPECT_EQ(y.value()[1], 1.0);
    }
}

TEST(QuantizeWeight, SignPatternRangeAndFormula)
{
    auto rng = make_stream(13, "weight");
    for (int k = 1; k <= 8; ++k) {
        const auto w = random_tensor<double>({200}, rng, 0.7);
        Tape<double> tape;
        const auto y = quant::quantize_weight(tape.constant(w), k).value();
        double m = 0;
        for (double v : w.values()) m = std::max(m, std::abs(std::tanh(v)));
        const double n = std::pow(2.0, k) - 1;
        for (std::size_t i = 0; i < w.size(); ++i) {
            EXPECT_LE(std::abs(y[i]), 1.0);
            const double s = y[i] == 0 ? 0 : (y[i] > 0 ? 1 : -1);
            EXPECT_TRUE(s == 0 || s == (w[i] >= 0 ? 1 : -1)) << w[i] << " -> " << y[i];
            const double u = std::tanh(w[i]) / (2 * m) + 0.5;
            EXPECT_NEAR(y[i], 2 * (std::round(n * u) / n) - 1, 1e-12);
        }
    }
}

TEST(QuantizeWeight, BackwardTreatsMaxAsConstant)
{
    // d/dw of 2 * (tanh(w) / (2m) + 1/2) - 1 with m fixed: (1 - tanh^2) / m
    auto rng = make_stream(14, "weight-bw");
    const auto w = random_tensor<double>({40}, rng);
    const auto g = grad_of(w, [](Var<double> v) { return quant::quantize_weight(v, 4); });
    double m = 0;
    for (double v : w.values()) m = std::max(m, std::abs(std::tanh(v)));
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double t = std::tanh(w[i]);
        EXPECT_NEAR(g[i], (1 - t * t) / m, 1e-12);
    }
}

TEST(QuantizeActivation, SaturationAndOneBitExample)
{
    Tensor<double> out;
    auto g = grad_of(Tensor<double>(Shape{1}, {2.5}), [](Var<double> v) { return quant::quantize_activation(v, 3); },
                     &out);
    EXPECT_EQ(out[0], 1.0);
    EXPECT_EQ(g[0], 0.0);
    Tape<double> tape;
    EXPECT_EQ(quant::quantize_activation(tape.constant(Tensor<double>(Shape{1}, {0.4})), 1).value()[0], 0.0);
}

TEST(QuantizeActivation, Monotone)
{
    auto rng = make_stream(15, "mono");
    for (int k : {1, 2, 4}) {
        Tensor<double> a(Shape{10000}), b(Shape{10000});
        for (std::size_t i = 0; i < a.size(); ++i) {
            double u = 3 * uniform01(rng) - 1, v = 3 * uniform01(rng) - 1;
            if (u > v) std::swap(u, v);
            a[i] = u;
            b[i] = v;
        }
        Tape<double> tape;
        const auto qa = quant::quantize_activation(tape.constant(a), k).value();
        const auto qb = quant::quantize_activation(tape.constant(b), k).value();
        for (std::size_t i = 0; i < a.size(); ++i) ASSERT_LE(qa[i], qb[i]);
        const auto qqa = quant::quantize_activation(tape.constant(qa), k).value();
        EXPECT_TRUE(bit_equal(qa, qqa));
    }
}

TEST(QuantizeActivation, ClippedStraightThroughOnGrid)
{
    Tensor<double> a(Shape{101});
    for (std::size_t i = 0; i < 101; ++i) a[i] = -1.0 + 3.0 * static_cast<double>(i) / 100.0;
    for (int k : {1, 2, 8}) {
        const auto g = grad_of(a, [k](Var<double> v) { return quant::quantize_activation(v, k); });
        for (std::size_t i = 0; i < 101; ++i) EXPECT_EQ(g[i], (a[i] >= 0 && a[i] <= 1) ? 1.0 : 0.0) << a[i];
    }
}

TEST(Binarize, SignAndStraightThrough)
{
    Tensor<double> out;
    const auto g = grad_of(Tensor<double>(Shape{5}, {-0.3, 0.0, 5.0, 2.0, 0.5}),
                           [](Var<double> v) { return quant::binarize(v); }, &out);
    EXPECT_EQ(out.values(), (std::vector<double>{-1, 1, 1, 1, 1}));
    EXPECT_EQ(g.values(), (std::vector<double>{1, 1, 0, 0, 1}));
}

TEST(Binarize, OutputIsBinary)
{
    auto rng = make_stream(16, "bin");
    const auto x = random_tensor<double>({10000}, rng, 2.0);
    Tape<double> tape;
    for (double v : quant::binarize(tape.constant(x)).value().values()) ASSERT_TRUE(v == 1.0 || v == -1.0);
}

TEST(FullScheme, IsExactIdentity)
{
    auto rng = make_stream(17, "full");
    const auto x = random_tensor<double>({64}, rng, 3.0);
    Tensor<double> wout, aout;
    const auto gw = grad_of(x, [](Var<double> v) { return quant::apply_weight_scheme(v, QuantScheme::full()); }, &wout);
    const auto ga =
        grad_of(x, [](Var<double> v) { return quant::apply_activation_scheme(v, QuantScheme::full()); }, &aout);
    EXPECT_TRUE(bit_equal(wout, x));
    EXPECT_TRUE(bit_equal(aout, x));
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(gw[i], 1.0);
        EXPECT_EQ(ga[i], 1.0);
    }
}

TEST(Schemes, FloatMatchesDoubleOnGrid)
{
    auto rng = make_stream(18, "float");
    Tensor<float> x(Shape{1000});
    for (auto& v : x.data()) v = static_cast<float>(uniform01(rng));
    Tape<float> tape;
    const auto y = quant::quantize_unit(tape.constant(x), 2).value();
    for (float v : y.values()) {
        const float i = std::round(v * 3.0f);
        EXPECT_FLOAT_EQ(v, i / 3.0f);
    }
}
