#include "auxq/kernels.hpp"

#include "channel_ops.hpp"

#include <omp.h>

#include <algorithm>
#include <cstring>
#include <atomic>
#include <vector>

namespace auxq::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::Fast};

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

}  // namespace

void set_backend(Backend b) noexcept { g_backend.store(b); }
Backend backend() noexcept { return g_backend.load(); }

void set_num_threads(int n) { omp_set_num_threads(std::max(1, n)); }
int num_threads() { return omp_get_max_threads(); }

namespace fast {

namespace {

constexpr std::size_t kColBlock = 256;
constexpr std::size_t kRowTile = 4;

// 32-byte vector type; GCC splits it on targets without AVX.
template <typename T>
struct Simd {
    typedef T type __attribute__((vector_size(32)));
    static constexpr std::size_t width = 32 / sizeof(T);

    static type load(const T* p)
    {
        type v;
        std::memcpy(&v, p, sizeof v);
        return v;
    }
    static void store(T* p, type v) { std::memcpy(p, &v, sizeof v); }
};

// C[0:4, 0:2W] (+)= A[0:4, :] * panel, panel packed as k rows of 2W.
// Accumulators stay in registers for the whole k loop.
template <typename T>
inline void micro_4x2w(std::size_t k, const T* a, std::size_t a_row, std::size_t a_col, const T* panel, T* c,
                       std::size_t ldc, bool accumulate)
{
    using S = Simd<T>;
    using V = typename S::type;
    constexpr std::size_t W = S::width;
    V acc[4][2];
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t h = 0; h < 2; ++h) acc[r][h] = accumulate ? S::load(c + r * ldc + h * W) : V{};
    const T* ap = a;
    for (std::size_t p = 0; p < k; ++p, panel += 2 * W, ap += a_col) {
        const V b0 = S::load(panel), b1 = S::load(panel + W);
        const T a0 = ap[0], a1 = ap[a_row], a2 = ap[2 * a_row], a3 = ap[3 * a_row];
        acc[0][0] += a0 * b0;
        acc[0][1] += a0 * b1;
        acc[1][0] += a1 * b0;
        acc[1][1] += a1 * b1;
        acc[2][0] += a2 * b0;
        acc[2][1] += a2 * b1;
        acc[3][0] += a3 * b0;
        acc[3][1] += a3 * b1;
    }
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t h = 0; h < 2; ++h) S::store(c + r * ldc + h * W, acc[r][h]);
}

// Plain loops for whatever the micro kernel does not cover.
template <typename T>
inline void gemm_scalar(std::size_t rows, std::size_t cols, std::size_t k, const T* a, std::size_t a_row,
                        std::size_t a_col, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate)
{
    for (std::size_t r = 0; r < rows; ++r) {
        T* __restrict cr = c + r * ldc;
        if (!accumulate) std::fill_n(cr, cols, T{0});
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[r * a_row + p * a_col];
            const T* __restrict bp = b + p * ldb;
            for (std::size_t j = 0; j < cols; ++j) cr[j] += av * bp[j];
        }
    }
}

// One column block of C, all rows. Every element is summed over p in
// increasing order; which path computes it depends only on its position.
template <typename T>
void gemm_column_block(std::size_t m, std::size_t cols, std::size_t k, const T* a, std::size_t a_row,
                       std::size_t a_col, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate,
                       std::vector<T>& panel)
{
    constexpr std::size_t NR = 2 * Simd<T>::width;
    const std::size_t full_rows = m / kRowTile * kRowTile;
    std::size_t j = 0;
    for (; j + NR <= cols; j += NR) {
        panel.resize(k * NR);
        for (std::size_t p = 0; p < k; ++p) std::copy_n(b + p * ldb + j, NR, panel.data() + p * NR);
        for (std::size_t i = 0; i < full_rows; i += kRowTile)
            micro_4x2w(k, a + i * a_row, a_row, a_col, panel.data(), c + i * ldc + j, ldc, accumulate);
        if (full_rows < m)
            gemm_scalar(m - full_rows, NR, k, a + full_rows * a_row, a_row, a_col, panel.data(), NR,
                        c + full_rows * ldc + j, ldc, accumulate);
    }
    if (j < cols) gemm_scalar(m, cols - j, k, a, a_row, a_col, b + j, ldb, c + j, ldc, accumulate);
}

// c[i * ldc + j] = sum_p a[i * lda + p] * b[j * ldb + p] for a 2 x 4 block.
// Lane partial sums are combined in a fixed order.
template <typename T>
inline void dot_block(std::size_t rows, std::size_t cols, std::size_t k, const T* a, std::size_t lda, const T* b,
                      std::size_t ldb, T* c, std::size_t ldc, bool accumulate)
{
    using S = Simd<T>;
    using V = typename S::type;
    constexpr std::size_t W = S::width;
    V acc[2][4] = {};
    const std::size_t kv = k / W * W;
    for (std::size_t p = 0; p < kv; p += W) {
        V av[2], bv[4];
        for (std::size_t r = 0; r < rows; ++r) av[r] = S::load(a + r * lda + p);
        for (std::size_t q = 0; q < cols; ++q) bv[q] = S::load(b + q * ldb + p);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t q = 0; q < cols; ++q) acc[r][q] += av[r] * bv[q];
    }
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t q = 0; q < cols; ++q) {
            T lanes[W];
            S::store(lanes, acc[r][q]);
            T sum = 0;
            for (std::size_t l = 0; l < W; ++l) sum += lanes[l];
            for (std::size_t p = kv; p < k; ++p) sum += a[r * lda + p] * b[q * ldb + p];
            c[r * ldc + q] = accumulate ? c[r * ldc + q] + sum : sum;
        }
}

// Patches of one image: col[((ci*KH + kh)*KW + kw) * ld + r*OW + c]
template <typename T>
void im2col_image(const ConvGeometry& g, const T* x, T* col, std::size_t ld)
{
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const std::size_t k = g.in_channels * g.kernel_h * g.kernel_w;
    for (std::size_t row = 0; row < k; ++row) {
        const std::size_t kw = row % g.kernel_w;
        const std::size_t kh = (row / g.kernel_w) % g.kernel_h;
        const std::size_t ci = row / (g.kernel_w * g.kernel_h);
        const T* src = x + ci * g.in_h * g.in_w;
        T* dst = col + row * ld;
        for (std::size_t r = 0; r < oh; ++r) {
            const auto ih = static_cast<std::ptrdiff_t>(r * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
            T* out = dst + r * ow;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
                std::fill_n(out, ow, T{0});
                continue;
            }
            const T* line = src + ih * g.in_w;
            for (std::size_t c = 0; c < ow; ++c) {
                const auto iw = static_cast<std::ptrdiff_t>(c * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
                out[c] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) ? T{0} : line[iw];
            }
        }
    }
}

// Adjoint of im2col_image: scatter-add patch gradients into one image plane set.
template <typename T>
void col2im_image(const ConvGeometry& g, const T* dcol, std::size_t ld, T* dx)
{
    const std::size_t oh = g.out_h(), ow = g.out_w();
    std::fill_n(dx, g.in_channels * g.in_h * g.in_w, T{0});
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        T* dst = dx + ci * g.in_h * g.in_w;
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                const T* src = dcol + ((ci * g.kernel_h + kh) * g.kernel_w + kw) * ld;
                for (std::size_t r = 0; r < oh; ++r) {
                    const auto ih =
                        static_cast<std::ptrdiff_t>(r * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    for (std::size_t c = 0; c < ow; ++c) {
                        const auto iw =
                            static_cast<std::ptrdiff_t>(c * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                        dst[ih * g.in_w + iw] += src[r * ow + c];
                    }
                }
            }
    }
}

// gemm without a parallel region of its own, for use inside one.
template <typename T>
void gemm_serial(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row, std::size_t a_col,
                 const T* b, std::size_t ldb, T* c, std::size_t ldc, std::vector<T>& panel)
{
    for (std::size_t j0 = 0; j0 < n; j0 += kColBlock)
        gemm_column_block(m, std::min(kColBlock, n - j0), k, a, a_row, a_col, b + j0, ldb, c + j0, ldc, false, panel);
}

}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row, std::size_t a_col, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate)
{
    const auto blocks = static_cast<std::ptrdiff_t>((n + kColBlock - 1) / kColBlock);
#pragma omp parallel if (m * n * k > kParallelWork)
    {
        std::vector<T> panel;
#pragma omp for schedule(static)
        for (std::ptrdiff_t jb = 0; jb < blocks; ++jb) {
            const std::size_t j0 = jb * kColBlock, cols = std::min(kColBlock, n - j0);
            gemm_column_block(m, cols, k, a, a_row, a_col, b + j0, ldb, c + j0, ldc, accumulate, panel);
        }
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc, bool accumulate)
{
    const std::size_t row_blocks = (m + 1) / 2, col_blocks = (n + 3) / 4;
    const auto blocks = static_cast<std::ptrdiff_t>(row_blocks * col_blocks);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
    for (std::ptrdiff_t t = 0; t < blocks; ++t) {
        const std::size_t i0 = t / col_blocks * 2, j0 = t % col_blocks * 4;
        dot_block(std::min<std::size_t>(2, m - i0), std::min<std::size_t>(4, n - j0), k, a + i0 * lda, lda,
                  b + j0 * ldb, ldb, c + i0 * ldc + j0, ldc, accumulate);
    }
}

// The convolutions run on fixed groups of images: the patch matrix of a group
// stays in cache and small feature maps still give the GEMM wide rows. Group
// size depends only on the geometry. Groups are split across threads; the
// weight gradient sums groups in index order.

std::size_t group_size(const ConvGeometry& g)
{
    const std::size_t ohw = g.out_h() * g.out_w();
    return std::clamp<std::size_t>((kColBlock + ohw - 1) / ohw, 1, g.batch);
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y)
{
    const std::size_t ohw = g.out_h() * g.out_w();
    const std::size_t k = g.in_channels * g.kernel_h * g.kernel_w;
    const std::size_t in_size = g.in_channels * g.in_h * g.in_w, out_size = g.out_channels * ohw;
    const std::size_t G = group_size(g), ld = G * ohw;
    const auto groups = static_cast<std::ptrdiff_t>((g.batch + G - 1) / G);
#pragma omp parallel if (groups > 1 && g.output_size() * k > kParallelWork)
    {
        std::vector<T> col(k * ld), out(g.out_channels * ld), panel;
#pragma omp for schedule(static)
        for (std::ptrdiff_t gi = 0; gi < groups; ++gi) {
            const std::size_t n0 = gi * G, count = std::min(G, g.batch - n0);
            for (std::size_t i = 0; i < count; ++i) im2col_image(g, x.data() + (n0 + i) * in_size, col.data() + i * ohw, ld);
            if (G == 1) {
                gemm_serial<T>(g.out_channels, ohw, k, w.data(), k, 1, col.data(), ld, y.data() + n0 * out_size, ohw,
                               panel);
                continue;
            }
            gemm_serial<T>(g.out_channels, count * ohw, k, w.data(), k, 1, col.data(), ld, out.data(), ld, panel);
            for (std::size_t i = 0; i < count; ++i)
                for (std::size_t co = 0; co < g.out_channels; ++co)
                    std::copy_n(out.data() + co * ld + i * ohw, ohw, y.data() + (n0 + i) * out_size + co * ohw);
        }
    }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx)
{
    const std::size_t ohw = g.out_h() * g.out_w();
    const std::size_t k = g.in_channels * g.kernel_h * g.kernel_w;
    const std::size_t in_size = g.in_channels * g.in_h * g.in_w, out_size = g.out_channels * ohw;
    const std::size_t G = group_size(g), ld = G * ohw;
    const auto groups = static_cast<std::ptrdiff_t>((g.batch + G - 1) / G);
#pragma omp parallel if (groups > 1 && g.output_size() * k > kParallelWork)
    {
        std::vector<T> dcol(k * ld), dyg(g.out_channels * ld), panel;
#pragma omp for schedule(static)
        for (std::ptrdiff_t gi = 0; gi < groups; ++gi) {
            const std::size_t n0 = gi * G, count = std::min(G, g.batch - n0);
            const T* src = dy.data() + n0 * out_size;
            if (G > 1) {
                for (std::size_t i = 0; i < count; ++i)
                    for (std::size_t co = 0; co < g.out_channels; ++co)
                        std::copy_n(dy.data() + (n0 + i) * out_size + co * ohw, ohw, dyg.data() + co * ld + i * ohw);
                src = dyg.data();
            }
            // dcol = W^T dY, with W^T(i, p) = w[p * k + i]
            gemm_serial<T>(k, count * ohw, g.out_channels, w.data(), 1, k, src, ld, dcol.data(), ld, panel);
            for (std::size_t i = 0; i < count; ++i)
                col2im_image(g, dcol.data() + i * ohw, ld, dx.data() + (n0 + i) * in_size);
        }
    }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dy, std::span<const T> x, std::span<T> dw)
{
    const std::size_t ohw = g.out_h() * g.out_w();
    const std::size_t k = g.in_channels * g.kernel_h * g.kernel_w;
    const std::size_t in_size = g.in_channels * g.in_h * g.in_w, out_size = g.out_channels * ohw;
    const std::size_t G = group_size(g), ld = G * ohw;
    std::vector<T> col(k * ld), dyg(g.out_channels * ld);
    for (std::size_t n0 = 0; n0 < g.batch; n0 += G) {
        const std::size_t count = std::min(G, g.batch - n0);
        for (std::size_t i = 0; i < count; ++i) {
            im2col_image(g, x.data() + (n0 + i) * in_size, col.data() + i * ohw, ld);
            for (std::size_t co = 0; co < g.out_channels; ++co)
                std::copy_n(dy.data() + (n0 + i) * out_size + co * ohw, ohw, dyg.data() + co * ld + i * ohw);
        }
        gemm_nt<T>(g.out_channels, k, count * ohw, dyg.data(), ld, col.data(), ld, dw.data(), k, n0 > 0);
    }
}

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y)
{
    std::vector<T> wt(g.in_features * g.out_features);
    for (std::size_t o = 0; o < g.out_features; ++o)
        for (std::size_t i = 0; i < g.in_features; ++i) wt[i * g.out_features + o] = w[o * g.in_features + i];
    gemm<T>(g.batch, g.out_features, g.in_features, x.data(), g.in_features, 1, wt.data(), g.out_features, y.data(),
            g.out_features, false);
}

template <typename T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx)
{
    gemm<T>(g.batch, g.in_features, g.out_features, dy.data(), g.out_features, 1, w.data(), g.in_features, dx.data(),
            g.in_features, false);
}

template <typename T>
void dense_backward_weight(const DenseGeometry& g, std::span<const T> dy, std::span<const T> x, std::span<T> dw)
{
    gemm<T>(g.out_features, g.in_features, g.batch, dy.data(), 1, g.out_features, x.data(), g.in_features, dw.data(),
            g.in_features, false);
}

template <typename T>
void channel_moments(const ChannelGeometry& g, std::span<const T> x, std::span<T> mean, std::span<T> var)
{
    const auto channels = static_cast<std::ptrdiff_t>(g.channels);
#pragma omp parallel for schedule(static) if (g.batch * g.channels * g.spatial > kParallelWork)
    for (std::ptrdiff_t c = 0; c < channels; ++c) detail::channel_moments_one(g, x.data(), c, mean[c], var[c]);
}

template <typename T>
void channel_normalize(const ChannelGeometry& g, std::span<const T> x, std::span<const T> mean,
                       std::span<const T> inv_std, std::span<const T> gamma, std::span<const T> beta, std::span<T> y)
{
    const auto channels = static_cast<std::ptrdiff_t>(g.channels);
#pragma omp parallel for schedule(static) if (g.batch * g.channels * g.spatial > kParallelWork)
    for (std::ptrdiff_t c = 0; c < channels; ++c)
        detail::channel_normalize_one(g, x.data(), c, mean[c], inv_std[c], gamma[c], beta[c], y.data());
}

template <typename T>
void batchnorm_backward(const ChannelGeometry& g, std::span<const T> dy, std::span<const T> x, std::span<const T> mean,
                        std::span<const T> inv_std, std::span<const T> gamma, std::span<T> dx, std::span<T> dgamma,
                        std::span<T> dbeta)
{
    const auto channels = static_cast<std::ptrdiff_t>(g.channels);
#pragma omp parallel for schedule(static) if (g.batch * g.channels * g.spatial > kParallelWork)
    for (std::ptrdiff_t c = 0; c < channels; ++c)
        detail::batchnorm_backward_one(g, dy.data(), x.data(), c, mean[c], inv_std[c], gamma[c], dx.data(),
                                       dgamma[c], dbeta[c]);
}

}  // namespace fast

#define AUXQ_DISPATCH(name, G)                                                       \
    template <typename T>                                                                       \
    void name(const G& g, std::span<const T> a, std::span<const T> b, std::span<T> c)           \
    {                                                                                           \
        if (backend() == Backend::Reference)                                                    \
            reference::name<T>(g, a, b, c);                                                     \
        else                                                                                    \
            fast::name<T>(g, a, b, c);                                                          \
    }

AUXQ_DISPATCH(conv2d_forward, ConvGeometry)
AUXQ_DISPATCH(conv2d_backward_input, ConvGeometry)
AUXQ_DISPATCH(conv2d_backward_weight, ConvGeometry)
AUXQ_DISPATCH(dense_forward, DenseGeometry)
AUXQ_DISPATCH(dense_backward_input, DenseGeometry)
AUXQ_DISPATCH(dense_backward_weight, DenseGeometry)

#undef AUXQ_DISPATCH

template <typename T>
void channel_moments(const ChannelGeometry& g, std::span<const T> x, std::span<T> mean, std::span<T> var)
{
    if (backend() == Backend::Reference)
        reference::channel_moments<T>(g, x, mean, var);
    else
        fast::channel_moments<T>(g, x, mean, var);
}

template <typename T>
void channel_normalize(const ChannelGeometry& g, std::span<const T> x, std::span<const T> mean,
                       std::span<const T> inv_std, std::span<const T> gamma, std::span<const T> beta, std::span<T> y)
{
    if (backend() == Backend::Reference)
        reference::channel_normalize<T>(g, x, mean, inv_std, gamma, beta, y);
    else
        fast::channel_normalize<T>(g, x, mean, inv_std, gamma, beta, y);
}

template <typename T>
void batchnorm_backward(const ChannelGeometry& g, std::span<const T> dy, std::span<const T> x, std::span<const T> mean,
                        std::span<const T> inv_std, std::span<const T> gamma, std::span<T> dx, std::span<T> dgamma,
                        std::span<T> dbeta)
{
    if (backend() == Backend::Reference)
        reference::batchnorm_backward<T>(g, dy, x, mean, inv_std, gamma, dx, dgamma, dbeta);
    else
        fast::batchnorm_backward<T>(g, dy, x, mean, inv_std, gamma, dx, dgamma, dbeta);
}

#define AUXQ_INSTANTIATE(NS, T)                                                                                      \
    template void NS conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<T>);   \
    template void NS conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,           \
                                              std::span<T>);                                                         \
    template void NS conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,          \
                                               std::span<T>);                                                        \
    template void NS dense_forward<T>(const DenseGeometry&, std::span<const T>, std::span<const T>, std::span<T>);   \
    template void NS dense_backward_input<T>(const DenseGeometry&, std::span<const T>, std::span<const T>,           \
                                             std::span<T>);                                                          \
    template void NS dense_backward_weight<T>(const DenseGeometry&, std::span<const T>, std::span<const T>,          \
                                              std::span<T>);                                                         \
    template void NS channel_moments<T>(const ChannelGeometry&, std::span<const T>, std::span<T>, std::span<T>);     \
    template void NS channel_normalize<T>(const ChannelGeometry&, std::span<const T>, std::span<const T>,            \
                                          std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>); \
    template void NS batchnorm_backward<T>(const ChannelGeometry&, std::span<const T>, std::span<const T>,           \
                                           std::span<const T>, std::span<const T>, std::span<const T>,               \
                                           std::span<T>, std::span<T>, std::span<T>);

AUXQ_INSTANTIATE(fast::, float)
AUXQ_INSTANTIATE(fast::, double)
AUXQ_INSTANTIATE(, float)
AUXQ_INSTANTIATE(, double)

#undef AUXQ_INSTANTIATE

template void fast::gemm<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t, std::size_t,
                                const float*, std::size_t, float*, std::size_t, bool);
template void fast::gemm<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t, std::size_t,
                                 const double*, std::size_t, double*, std::size_t, bool);
template void fast::gemm_nt<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t, const float*,
                                   std::size_t, float*, std::size_t, bool);
template void fast::gemm_nt<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                                    const double*, std::size_t, double*, std::size_t, bool);

}  // namespace auxq::kernels
