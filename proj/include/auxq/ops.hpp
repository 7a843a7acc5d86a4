#pragma once

// Differentiable ops over a Tape. Each op computes its forward value eagerly
// and records a node whose built-in backward rule can be replaced per tape with
// Tape::register_custom_backward(op-id, rule). The op-id of each function is
// its name.

#include "auxq/autodiff.hpp"

#include <span>

namespace auxq {

struct Conv2dAttrs {
    std::size_t stride = 1;
    std::size_t pad = 0;
};

// Per-channel normalization state. Running statistics move only in training mode.
template <typename T>
struct BatchNormState {
    Tensor<T> running_mean;
    Tensor<T> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1})
    {
    }
};

namespace ops {

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> scale(Var<T> x, T factor);
// factor * x + shift
template <typename T>
Var<T> affine(Var<T> x, T factor, T shift);
template <typename T>
Var<T> divide(Var<T> x, T divisor);

template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> tanh(Var<T> x);
// Backward passes gradient where lo <= x <= hi (both ends inclusive).
template <typename T>
Var<T> clip(Var<T> x, T lo, T hi);
// Round half away from zero. Built-in backward is zero everywhere.
template <typename T>
Var<T> round(Var<T> x);
// sign(0) = +1. Built-in backward is zero everywhere.
template <typename T>
Var<T> sign(Var<T> x);

// x: [N, in], w: [out, in] -> [N, out]
template <typename T>
Var<T> matmul(Var<T> x, Var<T> w);
// x: [N, C, H, W], w: [O, C, KH, KW] -> [N, O, OH, OW]
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Conv2dAttrs attrs);
template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, bool training);

// [N, C, H, W] -> [N, C]
template <typename T>
Var<T> global_avg_pool(Var<T> x);
// [N, C, H, W] -> [N, C, out_h, out_w]; bin i spans [floor(i*H/out_h), ceil((i+1)*H/out_h)).
template <typename T>
Var<T> adaptive_avg_pool(Var<T> x, std::size_t out_h, std::size_t out_w);

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);
// Mean over the batch of KL(softmax(teacher/t) || softmax(student/t)). The
// teacher enters as a constant.
template <typename T>
Var<T> kl_div_softened(Var<T> student_logits, const Tensor<T>& teacher_logits, T temperature);

}  // namespace ops

// Forward-only helpers shared by losses and metrics.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits, T temperature = T{1});

}  // namespace auxq
