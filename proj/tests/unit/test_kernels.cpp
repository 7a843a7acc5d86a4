#include "auxq/kernels.hpp"
#include "testing.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <tuple>

using namespace auxq;
namespace k = auxq::kernels;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng)
{
    std::vector<double> v(n);
    for (auto& x : v) x = standard_normal(rng);
    return v;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b)
{
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
    return worst;
}

struct ThreadGuard {
    int saved = k::num_threads();
    ~ThreadGuard() { k::set_num_threads(saved); }
};

const k::ConvGeometry kConvCases[] = {
    {2, 3, 9, 7, 5, 3, 3, 1, 1},
    {3, 4, 8, 8, 6, 3, 3, 2, 1},
    {1, 2, 5, 6, 3, 1, 1, 2, 0},
    {2, 16, 14, 14, 32, 3, 3, 2, 1},
    {1, 1, 4, 4, 2, 4, 4, 1, 0},
};

}  // namespace

TEST(Kernels, ConvForwardFastMatchesReference)
{
    auto rng = make_stream(1, "kconv");
    for (const auto& g : kConvCases) {
        const auto x = randn(g.input_size(), rng), w = randn(g.weight_size(), rng);
        std::vector<double> a(g.output_size()), b(g.output_size());
        k::reference::conv2d_forward<double>(g, x, w, a);
        k::fast::conv2d_forward<double>(g, x, w, b);
        EXPECT_LT(max_rel(b, a), 1e-12);
    }
}

TEST(Kernels, ConvBackwardFastMatchesReference)
{
    auto rng = make_stream(2, "kconvb");
    for (const auto& g : kConvCases) {
        const auto x = randn(g.input_size(), rng), w = randn(g.weight_size(), rng), dy = randn(g.output_size(), rng);
        std::vector<double> dxa(g.input_size()), dxb(g.input_size()), dwa(g.weight_size()), dwb(g.weight_size());
        k::reference::conv2d_backward_input<double>(g, dy, w, dxa);
        k::fast::conv2d_backward_input<double>(g, dy, w, dxb);
        k::reference::conv2d_backward_weight<double>(g, dy, x, dwa);
        k::fast::conv2d_backward_weight<double>(g, dy, x, dwb);
        EXPECT_LT(max_rel(dxb, dxa), 1e-12);
        EXPECT_LT(max_rel(dwb, dwa), 1e-12);
    }
}

TEST(Kernels, ConvBackwardIsTheAdjoint)
{
    // <conv(x, w), dy> = <x, conv^T(dy, w)> = <w, dW(dy, x)>
    auto rng = make_stream(3, "adj");
    for (const auto& g : kConvCases) {
        const auto x = randn(g.input_size(), rng), w = randn(g.weight_size(), rng), dy = randn(g.output_size(), rng);
        std::vector<double> y(g.output_size()), dx(g.input_size()), dw(g.weight_size());
        k::reference::conv2d_forward<double>(g, x, w, y);
        k::reference::conv2d_backward_input<double>(g, dy, w, dx);
        k::reference::conv2d_backward_weight<double>(g, dy, x, dw);
        double lhs = 0, rx = 0, rw = 0;
        for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * dy[i];
        for (std::size_t i = 0; i < x.size(); ++i) rx += x[i] * dx[i];
        for (std::size_t i = 0; i < w.size(); ++i) rw += w[i] * dw[i];
        EXPECT_NEAR(rx, lhs, 1e-9 * std::max(1.0, std::abs(lhs)));
        EXPECT_NEAR(rw, lhs, 1e-9 * std::max(1.0, std::abs(lhs)));
    }
}

TEST(Kernels, DenseAndChannelKernelsAgree)
{
    auto rng = make_stream(4, "dense");
    const k::DenseGeometry d{7, 13, 5};
    const auto x = randn(d.batch * d.in_features, rng), w = randn(d.out_features * d.in_features, rng);
    const auto dy = randn(d.batch * d.out_features, rng);
    std::vector<double> ya(35), yb(35), dxa(91), dxb(91), dwa(65), dwb(65);
    k::reference::dense_forward<double>(d, x, w, ya);
    k::fast::dense_forward<double>(d, x, w, yb);
    k::reference::dense_backward_input<double>(d, dy, w, dxa);
    k::fast::dense_backward_input<double>(d, dy, w, dxb);
    k::reference::dense_backward_weight<double>(d, dy, x, dwa);
    k::fast::dense_backward_weight<double>(d, dy, x, dwb);
    EXPECT_LT(max_rel(yb, ya), 1e-12);
    EXPECT_LT(max_rel(dxb, dxa), 1e-12);
    EXPECT_LT(max_rel(dwb, dwa), 1e-12);

    const k::ChannelGeometry c{4, 3, 10};
    const auto xc = randn(120, rng);
    std::vector<double> ma(3), va(3), mb(3), vb(3);
    k::reference::channel_moments<double>(c, xc, ma, va);
    k::fast::channel_moments<double>(c, xc, mb, vb);
    EXPECT_LT(max_rel(mb, ma), 1e-12);
    EXPECT_LT(max_rel(vb, va), 1e-12);
}

TEST(Kernels, GemmMatchesNaiveTripleLoop)
{
    auto rng = make_stream(5, "gemm");
    for (auto [m, n, kk] : {std::tuple{1, 1, 1}, {5, 7, 3}, {70, 33, 129}, {64, 200, 9}}) {
        const auto a = randn(m * kk, rng), b = randn(kk * n, rng);
        std::vector<double> c(m * n, 0.5), want(m * n, 0.5);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                for (int p = 0; p < kk; ++p) want[i * n + j] += a[i * kk + p] * b[p * n + j];
        k::fast::gemm<double>(m, n, kk, a.data(), kk, 1, b.data(), n, c.data(), n, true);
        EXPECT_LT(max_rel(c, want), 1e-12);
        // transposed A access
        std::vector<double> at(kk * m), ct(m * n);
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < kk; ++p) at[p * m + i] = a[i * kk + p];
        k::fast::gemm<double>(m, n, kk, at.data(), 1, m, b.data(), n, ct.data(), n, false);
        for (auto& v : want) v -= 0.5;
        EXPECT_LT(max_rel(ct, want), 1e-12);
    }
}

TEST(Kernels, FastIsBitIdenticalAcrossThreadCounts)
{
    ThreadGuard guard;
    auto rng = make_stream(6, "threads");
    const auto& g = kConvCases[3];
    const auto x = randn(g.input_size(), rng), w = randn(g.weight_size(), rng), dy = randn(g.output_size(), rng);
    auto run = [&](int threads) {
        k::set_num_threads(threads);
        std::vector<double> y(g.output_size()), dx(g.input_size()), dw(g.weight_size());
        k::fast::conv2d_forward<double>(g, x, w, y);
        k::fast::conv2d_backward_input<double>(g, dy, w, dx);
        k::fast::conv2d_backward_weight<double>(g, dy, x, dw);
        y.insert(y.end(), dx.begin(), dx.end());
        y.insert(y.end(), dw.begin(), dw.end());
        return y;
    };
    const auto one = run(1);
    for (int t : {2, 3, 4}) {
        const auto many = run(t);
        ASSERT_EQ(one.size(), many.size());
        EXPECT_EQ(std::memcmp(one.data(), many.data(), one.size() * sizeof(double)), 0) << t << " threads";
    }
}

TEST(Kernels, BackendDispatch)
{
    const auto saved = k::backend();
    k::set_backend(k::Backend::Reference);
    EXPECT_EQ(k::backend(), k::Backend::Reference);
    auto rng = make_stream(7, "dispatch");
    const auto& g = kConvCases[0];
    const auto x = randn(g.input_size(), rng), w = randn(g.weight_size(), rng);
    std::vector<double> a(g.output_size()), b(g.output_size());
    k::conv2d_forward<double>(g, x, w, a);
    k::reference::conv2d_forward<double>(g, x, w, b);
    EXPECT_EQ(a, b);
    k::set_backend(saved);
}
