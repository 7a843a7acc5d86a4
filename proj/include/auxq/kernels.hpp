#pragma once

// Compute kernels behind the autodiff ops.
//
// Two implementations share one set of signatures:
//   reference::  direct nested loops, single thread. Kept as the correctness
//                oracle for tests and as the baseline in bench/.
//   fast::       per-image im2col + register-blocked GEMM, OpenMP over images
//                or output blocks.
//                Every output element is reduced in a fixed order by exactly
//                one thread, so results are bit-identical for any thread count.
//
// The unqualified functions dispatch on the process-wide backend (fast by default).

#include <cstddef>
#include <span>

namespace auxq::kernels {

struct ConvGeometry {
    std::size_t batch = 1;
    std::size_t in_channels = 1;
    std::size_t in_h = 1;
    std::size_t in_w = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;

    std::size_t out_h() const { return (in_h + 2 * pad - kernel_h) / stride + 1; }
    std::size_t out_w() const { return (in_w + 2 * pad - kernel_w) / stride + 1; }
    std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
    std::size_t weight_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
    std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
};

struct DenseGeometry {
    std::size_t batch = 1;
    std::size_t in_features = 1;
    std::size_t out_features = 1;
};

// Per-channel statistics over N, H, W of an NCHW tensor.
struct ChannelGeometry {
    std::size_t batch = 1;
    std::size_t channels = 1;
    std::size_t spatial = 1;  // H * W
};

enum class Backend { Reference, Fast };

void set_backend(Backend backend) noexcept;
Backend backend() noexcept;

void set_num_threads(int n);
int num_threads();

#define AUXQ_KERNEL_DECLS                                                                                             \
    template <typename T>                                                                                             \
    void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y);           \
    template <typename T>                                                                                             \
    void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx);  \
    template <typename T>                                                                                             \
    void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dy, std::span<const T> x, std::span<T> dw); \
    template <typename T>                                                                                             \
    void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y);           \
    template <typename T>                                                                                             \
    void dense_backward_input(const DenseGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx);  \
    template <typename T>                                                                                             \
    void dense_backward_weight(const DenseGeometry& g, std::span<const T> dy, std::span<const T> x, std::span<T> dw); \
    /* Batch statistics: mean and biased variance per channel. */                                                     \
    template <typename T>                                                                                             \
    void channel_moments(const ChannelGeometry& g, std::span<const T> x, std::span<T> mean, std::span<T> var);        \
    /* y = gamma * (x - mean) * inv_std + beta */                                                                     \
    template <typename T>                                                                                             \
    void channel_normalize(const ChannelGeometry& g, std::span<const T> x, std::span<const T> mean,                   \
                           std::span<const T> inv_std, std::span<const T> gamma, std::span<const T> beta,             \
                           std::span<T> y);                                                                           \
    /* Backward of batch-statistics normalization. dgamma/dbeta are overwritten. */                                   \
    template <typename T>                                                                                             \
    void batchnorm_backward(const ChannelGeometry& g, std::span<const T> dy, std::span<const T> x,                    \
                            std::span<const T> mean, std::span<const T> inv_std, std::span<const T> gamma,            \
                            std::span<T> dx, std::span<T> dgamma, std::span<T> dbeta);

namespace reference {
AUXQ_KERNEL_DECLS
}

namespace fast {
AUXQ_KERNEL_DECLS

// C[i, j] (+)= sum_k A(i, k) * B[k * ldb + j], with A(i, k) = a[i * a_row + k * a_col].
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row, std::size_t a_col, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

// C[i, j] (+)= sum_k a[i * lda + k] * b[j * ldb + k]; both operands contiguous along k.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc, bool accumulate);
}  // namespace fast

AUXQ_KERNEL_DECLS

#undef AUXQ_KERNEL_DECLS

}  // namespace auxq::kernels
