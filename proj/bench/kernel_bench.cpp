// Reference loops vs the im2col/GEMM kernels on the layer shapes of plain4 at batch 64.

#include "auxq/kernels.hpp"
#include "auxq/random.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace k = auxq::kernels;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed)
{
    auto rng = auxq::make_stream(seed, "bench");
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(auxq::standard_normal(rng));
    return v;
}

// (in_channels, size, out_channels, stride) for the stem and the four blocks' first convs.
k::ConvGeometry layer(int i)
{
    static const std::size_t table[][4] = {{1, 28, 16, 1}, {16, 28, 16, 2}, {16, 14, 32, 2}, {32, 7, 64, 2}, {64, 4, 64, 1}};
    const auto* t = table[i];
    return {64, t[0], t[1], t[1], t[2], 3, 3, t[3], 1};
}

template <bool Fast>
void conv_forward(benchmark::State& state)
{
    const auto g = layer(static_cast<int>(state.range(0)));
    const auto x = noise(g.input_size(), 1), w = noise(g.weight_size(), 2);
    std::vector<float> y(g.output_size());
    for (auto _ : state) {
        if constexpr (Fast)
            k::fast::conv2d_forward<float>(g, x, w, y);
        else
            k::reference::conv2d_forward<float>(g, x, w, y);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.output_size() * g.in_channels * 9));
}

template <bool Fast>
void conv_backward(benchmark::State& state)
{
    const auto g = layer(static_cast<int>(state.range(0)));
    const auto x = noise(g.input_size(), 1), w = noise(g.weight_size(), 2), dy = noise(g.output_size(), 3);
    std::vector<float> dx(g.input_size()), dw(g.weight_size());
    for (auto _ : state) {
        if constexpr (Fast) {
            k::fast::conv2d_backward_input<float>(g, dy, w, dx);
            k::fast::conv2d_backward_weight<float>(g, dy, x, dw);
        } else {
            k::reference::conv2d_backward_input<float>(g, dy, w, dx);
            k::reference::conv2d_backward_weight<float>(g, dy, x, dw);
        }
        benchmark::DoNotOptimize(dx.data());
        benchmark::DoNotOptimize(dw.data());
    }
}

template <bool Fast>
void batchnorm(benchmark::State& state)
{
    const k::ChannelGeometry g{64, 32, 14 * 14};
    const auto x = noise(g.batch * g.channels * g.spatial, 4);
    std::vector<float> mean(g.channels), var(g.channels);
    for (auto _ : state) {
        if constexpr (Fast)
            k::fast::channel_moments<float>(g, x, mean, var);
        else
            k::reference::channel_moments<float>(g, x, mean, var);
        benchmark::DoNotOptimize(var.data());
    }
}

}  // namespace

BENCHMARK(conv_forward<false>)->Name("conv_forward/reference")->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_forward<true>)->Name("conv_forward/fast")->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<false>)->Name("conv_backward/reference")->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<true>)->Name("conv_backward/fast")->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(batchnorm<false>)->Name("channel_moments/reference")->Unit(benchmark::kMicrosecond);
BENCHMARK(batchnorm<true>)->Name("channel_moments/fast")->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
