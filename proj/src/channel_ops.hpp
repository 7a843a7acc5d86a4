#pragma once

// Per-channel batch-norm arithmetic shared by the reference and fast kernels so
// both produce the same bits: only the loop over channels differs.

#include "auxq/kernels.hpp"

namespace auxq::kernels::detail {

template <typename T>
inline void channel_moments_one(const ChannelGeometry& g, const T* x, std::size_t c, T& mean, T& var)
{
    const T count = static_cast<T>(g.batch * g.spatial);
    T sum = 0;
    for (std::size_t n = 0; n < g.batch; ++n) {
        const T* p = x + (n * g.channels + c) * g.spatial;
        for (std::size_t s = 0; s < g.spatial; ++s) sum += p[s];
    }
    const T m = sum / count;
    T sq = 0;
    for (std::size_t n = 0; n < g.batch; ++n) {
        const T* p = x + (n * g.channels + c) * g.spatial;
        for (std::size_t s = 0; s < g.spatial; ++s) sq += (p[s] - m) * (p[s] - m);
    }
    mean = m;
    var = sq / count;
}

template <typename T>
inline void channel_normalize_one(const ChannelGeometry& g, const T* x, std::size_t c, T mean, T inv_std, T gamma,
                                  T beta, T* y)
{
    for (std::size_t n = 0; n < g.batch; ++n) {
        const std::size_t base = (n * g.channels + c) * g.spatial;
        for (std::size_t s = 0; s < g.spatial; ++s) y[base + s] = gamma * ((x[base + s] - mean) * inv_std) + beta;
    }
}

template <typename T>
inline void batchnorm_backward_one(const ChannelGeometry& g, const T* dy, const T* x, std::size_t c, T mean, T inv_std,
                                   T gamma, T* dx, T& dgamma, T& dbeta)
{
    const T count = static_cast<T>(g.batch * g.spatial);
    T sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t n = 0; n < g.batch; ++n) {
        const std::size_t base = (n * g.channels + c) * g.spatial;
        for (std::size_t s = 0; s < g.spatial; ++s) {
            const T xhat = (x[base + s] - mean) * inv_std;
            sum_dy += dy[base + s];
            sum_dy_xhat += dy[base + s] * xhat;
        }
    }
    dbeta = sum_dy;
    dgamma = sum_dy_xhat;
    const T scale = gamma * inv_std / count;
    for (std::size_t n = 0; n < g.batch; ++n) {
        const std::size_t base = (n * g.channels + c) * g.spatial;
        for (std::size_t s = 0; s < g.spatial; ++s) {
            const T xhat = (x[base + s] - mean) * inv_std;
            dx[base + s] = scale * (count * dy[base + s] - sum_dy - xhat * sum_dy_xhat);
        }
    }
}

}  // namespace auxq::kernels::detail
