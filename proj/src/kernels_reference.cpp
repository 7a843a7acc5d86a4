#include "auxq/kernels.hpp"

#include "channel_ops.hpp"

#include <algorithm>

namespace auxq::kernels::reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y)
{
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t r = 0; r < oh; ++r)
                for (std::size_t c = 0; c < ow; ++c) {
                    T acc = 0;
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
                            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                                const auto ih = static_cast<std::ptrdiff_t>(r * g.stride + kh) -
                                                static_cast<std::ptrdiff_t>(g.pad);
                                const auto iw = static_cast<std::ptrdiff_t>(c * g.stride + kw) -
                                                static_cast<std::ptrdiff_t>(g.pad);
                                if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h) ||
                                    iw >= static_cast<std::ptrdiff_t>(g.in_w))
                                    continue;
                                acc += x[((n * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw] *
                                       w[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw];
                            }
                    y[((n * g.out_channels + co) * oh + r) * ow + c] = acc;
                }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx)
{
    std::fill(dx.begin(), dx.end(), T{0});
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t r = 0; r < oh; ++r)
                for (std::size_t c = 0; c < ow; ++c) {
                    const T up = dy[((n * g.out_channels + co) * oh + r) * ow + c];
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
                            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                                const auto ih = static_cast<std::ptrdiff_t>(r * g.stride + kh) -
                                                static_cast<std::ptrdiff_t>(g.pad);
                                const auto iw = static_cast<std::ptrdiff_t>(c * g.stride + kw) -
                                                static_cast<std::ptrdiff_t>(g.pad);
                                if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h) ||
                                    iw >= static_cast<std::ptrdiff_t>(g.in_w))
                                    continue;
                                dx[((n * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw] +=
                                    up * w[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw];
                            }
                }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dy, std::span<const T> x, std::span<T> dw)
{
    std::fill(dw.begin(), dw.end(), T{0});
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t r = 0; r < oh; ++r)
                for (std::size_t c = 0; c < ow; ++c) {
                    const T up = dy[((n * g.out_channels + co) * oh + r) * ow + c];
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
                            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                                const auto ih = static_cast<std::ptrdiff_t>(r * g.stride + kh) -
                                                static_cast<std::ptrdiff_t>(g.pad);
                                const auto iw = static_cast<std::ptrdiff_t>(c * g.stride + kw) -
                                                static_cast<std::ptrdiff_t>(g.pad);
                                if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h) ||
                                    iw >= static_cast<std::ptrdiff_t>(g.in_w))
                                    continue;
                                dw[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw] +=
                                    up * x[((n * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw];
                            }
                }
}

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y)
{
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_features; ++o) {
            T acc = 0;
            for (std::size_t i = 0; i < g.in_features; ++i) acc += x[n * g.in_features + i] * w[o * g.in_features + i];
            y[n * g.out_features + o] = acc;
        }
}

template <typename T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx)
{
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t i = 0; i < g.in_features; ++i) {
            T acc = 0;
            for (std::size_t o = 0; o < g.out_features; ++o)
                acc += dy[n * g.out_features + o] * w[o * g.in_features + i];
            dx[n * g.in_features + i] = acc;
        }
}

template <typename T>
void dense_backward_weight(const DenseGeometry& g, std::span<const T> dy, std::span<const T> x, std::span<T> dw)
{
    for (std::size_t o = 0; o < g.out_features; ++o)
        for (std::size_t i = 0; i < g.in_features; ++i) {
            T acc = 0;
            for (std::size_t n = 0; n < g.batch; ++n) acc += dy[n * g.out_features + o] * x[n * g.in_features + i];
            dw[o * g.in_features + i] = acc;
        }
}

template <typename T>
void channel_moments(const ChannelGeometry& g, std::span<const T> x, std::span<T> mean, std::span<T> var)
{
    for (std::size_t c = 0; c < g.channels; ++c) detail::channel_moments_one(g, x.data(), c, mean[c], var[c]);
}

template <typename T>
void channel_normalize(const ChannelGeometry& g, std::span<const T> x, std::span<const T> mean,
                       std::span<const T> inv_std, std::span<const T> gamma, std::span<const T> beta, std::span<T> y)
{
    for (std::size_t c = 0; c < g.channels; ++c)
        detail::channel_normalize_one(g, x.data(), c, mean[c], inv_std[c], gamma[c], beta[c], y.data());
}

template <typename T>
void batchnorm_backward(const ChannelGeometry& g, std::span<const T> dy, std::span<const T> x, std::span<const T> mean,
                        std::span<const T> inv_std, std::span<const T> gamma, std::span<T> dx, std::span<T> dgamma,
                        std::span<T> dbeta)
{
    for (std::size_t c = 0; c < g.channels; ++c)
        detail::batchnorm_backward_one(g, dy.data(), x.data(), c, mean[c], inv_std[c], gamma[c], dx.data(), dgamma[c],
                                       dbeta[c]);
}

#define AUXQ_INSTANTIATE(T)                                                                                         \
    template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<T>);     \
    template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,             \
                                           std::span<T>);                                                           \
    template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,            \
                                            std::span<T>);                                                          \
    template void dense_forward<T>(const DenseGeometry&, std::span<const T>, std::span<const T>, std::span<T>);     \
    template void dense_backward_input<T>(const DenseGeometry&, std::span<const T>, std::span<const T>,             \
                                          std::span<T>);                                                            \
    template void dense_backward_weight<T>(const DenseGeometry&, std::span<const T>, std::span<const T>,            \
                                           std::span<T>);                                                           \
    template void channel_moments<T>(const ChannelGeometry&, std::span<const T>, std::span<T>, std::span<T>);       \
    template void channel_normalize<T>(const ChannelGeometry&, std::span<const T>, std::span<const T>,              \
                                       std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>);   \
    template void batchnorm_backward<T>(const ChannelGeometry&, std::span<const T>, std::span<const T>,             \
                                        std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>,   \
                                        std::span<T>, std::span<T>);

AUXQ_INSTANTIATE(float)
AUXQ_INSTANTIATE(double)

#undef AUXQ_INSTANTIATE

}  // namespace auxq::kernels::reference
