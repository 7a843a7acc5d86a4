#include "auxq/ops.hpp"

#include "auxq/errors.hpp"
#include "auxq/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace auxq {

namespace {

template <typename T>
void require_same_shape(std::string_view op, const Var<T>& a, const Var<T>& b)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

template <typename T>
void require_rank(std::string_view op, const char* what, const Var<T>& v, std::size_t rank)
{
    if (v.shape().size() != rank)
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         to_string(v.shape()));
}

// Elementwise unary op with derivative d(out)/d(in) given (in, out).
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(std::string_view op, Var<T> x, Fwd fwd, Deriv deriv)
{
    const auto& in = x.value();
    Tensor<T> out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    return x.tape().record(op, {x}, std::move(out), [deriv](GradAccess<T>& g) {
        if (!g.needs(0)) return;
        const auto& up = g.upstream();
        const auto& in = g.input(0);
        const auto& out = g.output();
        auto& dx = g.grad(0);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += up[i] * deriv(in[i], out[i]);
    });
}

// Row-wise log-sum-exp of logits / temperature.
template <typename T>
std::vector<T> row_logsumexp(const Tensor<T>& logits, T temperature)
{
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    std::vector<T> lse(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* z = logits.raw() + r * cols;
        T m = z[0] / temperature;
        for (std::size_t c = 1; c < cols; ++c) m = std::max(m, z[c] / temperature);
        T s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += std::exp(z[c] / temperature - m);
        lse[r] = m + std::log(s);
    }
    return lse;
}

}  // namespace

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits, T temperature)
{
    const auto lse = row_logsumexp(logits, temperature);
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    Tensor<T> p(logits.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) p[r * cols + c] = std::exp(logits[r * cols + c] / temperature - lse[r]);
    return p;
}

namespace ops {

template <typename T>
Var<T> add(Var<T> a, Var<T> b)
{
    require_same_shape("add", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return a.tape().record("add", {a, b}, std::move(out), [](GradAccess<T>& g) {
        const auto& up = g.upstream();
        for (std::size_t k = 0; k < 2; ++k) {
            if (!g.needs(k)) continue;
            auto& d = g.grad(k);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += up[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b)
{
    require_same_shape("mul", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return a.tape().record("mul", {a, b}, std::move(out), [](GradAccess<T>& g) {
        const auto& up = g.upstream();
        for (std::size_t k = 0; k < 2; ++k) {
            if (!g.needs(k)) continue;
            const auto& other = g.input(1 - k);
            auto& d = g.grad(k);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += up[i] * other[i];
        }
    });
}

template <typename T>
Var<T> sum(Var<T> x)
{
    T s = 0;
    for (T v : x.value().data()) s += v;
    return x.tape().record("sum", {x}, Tensor<T>::scalar(s), [](GradAccess<T>& g) {
        if (!g.needs(0)) return;
        const T up = g.upstream()[0];
        auto& d = g.grad(0);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += up;
    });
}

template <typename T>
Var<T> scale(Var<T> x, T factor)
{
    const auto& in = x.value();
    Tensor<T> out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
    return x.tape().record("scale", {x}, std::move(out), [factor](GradAccess<T>& g) {
        if (!g.needs(0)) return;
        const auto& up = g.upstream();
        auto& d = g.grad(0);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += up[i] * factor;
    });
}

template <typename T>
Var<T> affine(Var<T> x, T factor, T shift)
{
    const auto& in = x.value();
    Tensor<T> out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = factor * in[i] + shift;
    return x.tape().record("affine", {x}, std::move(out), [factor](GradAccess<T>& g) {
        if (!g.needs(0)) return;
        const auto& up = g.upstream();
        auto& d = g.grad(0);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += up[i] * factor;
    });
}

template <typename T>
Var<T> divide(Var<T> x, T divisor)
{
    const auto& in = x.value();
    Tensor<T> out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] / divisor;
    return x.tape().record("divide", {x}, std::move(out), [divisor](GradAccess<T>& g) {
        if (!g.needs(0)) return;
        const auto& up = g.upstream();
        auto& d = g.grad(0);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += up[i] / divisor;
    });
}

template <typename T>
Var<T> relu(Var<T> x)
{
    return unary<T>(
        "relu", x, [](T v) { return v > T{0} ? v : T{0}; }, [](T in, T) { return in > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> tanh(Var<T> x)
{
    return unary<T>(
        "tanh", x, [](T v) { return std::tanh(v); }, [](T, T out) { return T{1} - out * out; });
}

template <typename T>
Var<T> clip(Var<T> x, T lo, T hi)
{
    if (!(lo <= hi)) throw UsageError("clip: lower bound exceeds upper bound");
    return unary<T>(
        "clip", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
        [lo, hi](T in, T) { return (in >= lo && in <= hi) ? T{1} : T{0}; });
}

template <typename T>
Var<T> round(Var<T> x)
{
    return unary<T>(
        "round", x, [](T v) { return std::round(v); }, [](T, T) { return T{0}; });
}

template <typename T>
Var<T> sign(Var<T> x)
{
    return unary<T>(
        "sign", x, [](T v) { return v >= T{0} ? T{1} : T{-1}; }, [](T, T) { return T{0}; });
}

template <typename T>
Var<T> matmul(Var<T> x, Var<T> w)
{
    require_rank("matmul", "input", x, 2);
    require_rank("matmul", "weight", w, 2);
    if (x.shape()[1] != w.shape()[1])
        throw ShapeError("matmul: input features " + std::to_string(x.shape()[1]) + " != weight in-features " +
                         std::to_string(w.shape()[1]) + " (input " + to_string(x.shape()) + ", weight " +
                         to_string(w.shape()) + ")");
    const kernels::DenseGeometry geo{x.shape()[0], x.shape()[1], w.shape()[0]};
    Tensor<T> out(Shape{geo.batch, geo.out_features});
    kernels::dense_forward<T>(geo, x.value().data(), w.value().data(), out.data());
    return x.tape().record("matmul", {x, w}, std::move(out), [geo](GradAccess<T>& g) {
        const auto& up = g.upstream();
        if (g.needs(0)) {
            Tensor<T> dx(g.input(0).shape());
            kernels::dense_backward_input<T>(geo, up.data(), g.input(1).data(), dx.data());
            auto& acc = g.grad(0);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += dx[i];
        }
        if (g.needs(1)) {
            Tensor<T> dw(g.input(1).shape());
            kernels::dense_backward_weight<T>(geo, up.data(), g.input(0).data(), dw.data());
            auto& acc = g.grad(1);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += dw[i];
        }
    });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Conv2dAttrs attrs)
{
    require_rank("conv2d", "input", x, 4);
    require_rank("conv2d", "weight", w, 4);
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs[1] != ws[1])
        throw ShapeError("conv2d: input channels " + std::to_string(xs[1]) + " != weight in-channels " +
                         std::to_string(ws[1]) + " (input " + to_string(xs) + ", weight " + to_string(ws) + ")");
    if (attrs.stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (xs[2] + 2 * attrs.pad < ws[2] || xs[3] + 2 * attrs.pad < ws[3])
        throw ShapeError("conv2d: kernel " + to_string(ws) + " larger than padded input " + to_string(xs));
    const kernels::ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], attrs.stride, attrs.pad};
    Tensor<T> out(Shape{geo.batch, geo.out_channels, geo.out_h(), geo.out_w()});
    kernels::conv2d_forward<T>(geo, x.value().data(), w.value().data(), out.data());
    return x.tape().record("conv2d", {x, w}, std::move(out), [geo](GradAccess<T>& g) {
        const auto& up = g.upstream();
        if (g.needs(0)) {
            Tensor<T> dx(g.input(0).shape());
            kernels::conv2d_backward_input<T>(geo, up.data(), g.input(1).data(), dx.data());
            auto& acc = g.grad(0);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += dx[i];
        }
        if (g.needs(1)) {
            Tensor<T> dw(g.input(1).shape());
            kernels::conv2d_backward_weight<T>(geo, up.data(), g.input(0).data(), dw.data());
            auto& acc = g.grad(1);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += dw[i];
        }
    });
}

template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, bool training)
{
    require_rank("batchnorm", "input", x, 4);
    const auto& xs = x.shape();
    const std::size_t channels = xs[1];
    for (const auto* v : {&gamma, &beta})
        if (v->shape() != Shape{channels})
            throw ShapeError("batchnorm: per-channel parameter has shape " + to_string(v->shape()) +
                             ", expected [" + std::to_string(channels) + "] for input " + to_string(xs));
    if (state.running_mean.shape() != Shape{channels})
        throw ShapeError("batchnorm: running statistics sized " + to_string(state.running_mean.shape()) +
                         " for input " + to_string(xs));
    const kernels::ChannelGeometry geo{xs[0], channels, xs[2] * xs[3]};

    auto mean = std::make_shared<std::vector<T>>(channels);
    auto inv_std = std::make_shared<std::vector<T>>(channels);
    const T eps = static_cast<T>(state.eps);
    if (training) {
        std::vector<T> var(channels);
        kernels::channel_moments<T>(geo, x.value().data(), *mean, var);
        const T count = static_cast<T>(geo.batch * geo.spatial);
        const T unbias = count > T{1} ? count / (count - T{1}) : T{1};
        const T m = static_cast<T>(state.momentum);
        for (std::size_t c = 0; c < channels; ++c) {
            (*inv_std)[c] = T{1} / std::sqrt(var[c] + eps);
            state.running_mean[c] = (T{1} - m) * state.running_mean[c] + m * (*mean)[c];
            state.running_var[c] = (T{1} - m) * state.running_var[c] + m * var[c] * unbias;
        }
    } else {
        for (std::size_t c = 0; c < channels; ++c) {
            (*mean)[c] = state.running_mean[c];
            (*inv_std)[c] = T{1} / std::sqrt(state.running_var[c] + eps);
        }
    }
    Tensor<T> out(xs);
    kernels::channel_normalize<T>(geo, x.value().data(), *mean, *inv_std, gamma.value().data(), beta.value().data(),
                                  out.data());

    return x.tape().record("batchnorm", {x, gamma, beta}, std::move(out), [geo, mean, inv_std, training](GradAccess<T>& g) {
        const auto& up = g.upstream();
        const auto& xv = g.input(0);
        const auto& gv = g.input(1);
        Tensor<T> dx(xv.shape());
        std::vector<T> dgamma(geo.channels), dbeta(geo.channels);
        if (training) {
            kernels::batchnorm_backward<T>(geo, up.data(), xv.data(), *mean, *inv_std, gv.data(), dx.data(), dgamma,
                                           dbeta);
        } else {
            for (std::size_t c = 0; c < geo.channels; ++c) {
                T sdy = 0, sdyx = 0;
                for (std::size_t n = 0; n < geo.batch; ++n) {
                    const std::size_t base = (n * geo.channels + c) * geo.spatial;
                    for (std::size_t s = 0; s < geo.spatial; ++s) {
                        const T xhat = (xv[base + s] - (*mean)[c]) * (*inv_std)[c];
                        sdy += up[base + s];
                        sdyx += up[base + s] * xhat;
                        dx[base + s] = up[base + s] * gv[c] * (*inv_std)[c];
                    }
                }
                dgamma[c] = sdyx;
                dbeta[c] = sdy;
            }
        }
        if (g.needs(0)) {
            auto& acc = g.grad(0);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += dx[i];
        }
        if (g.needs(1)) {
            auto& acc = g.grad(1);
            for (std::size_t c = 0; c < geo.channels; ++c) acc[c] += dgamma[c];
        }
        if (g.needs(2)) {
            auto& acc = g.grad(2);
            for (std::size_t c = 0; c < geo.channels; ++c) acc[c] += dbeta[c];
        }
    });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x)
{
    require_rank("global_avg_pool", "input", x, 4);
    const auto& xs = x.shape();
    const std::size_t planes = xs[0] * xs[1], spatial = xs[2] * xs[3];
    const auto& in = x.value();
    Tensor<T> out(Shape{xs[0], xs[1]});
    for (std::size_t p = 0; p < planes; ++p) {
        T s = 0;
        for (std::size_t i = 0; i < spatial; ++i) s += in[p * spatial + i];
        out[p] = s / static_cast<T>(spatial);
    }
    return x.tape().record("global_avg_pool", {x}, std::move(out), [planes, spatial](GradAccess<T>& g) {
        if (!g.needs(0)) return;
        const auto& up = g.upstream();
        auto& d = g.grad(0);
        for (std::size_t p = 0; p < planes; ++p) {
            const T share = up[p] / static_cast<T>(spatial);
            for (std::size_t i = 0; i < spatial; ++i) d[p * spatial + i] += share;
        }
    });
}

template <typename T>
Var<T> adaptive_avg_pool(Var<T> x, std::size_t out_h, std::size_t out_w)
{
    require_rank("adaptive_avg_pool", "input", x, 4);
    const Shape xs = x.shape();
    if (out_h == 0 || out_w == 0 || out_h > xs[2] || out_w > xs[3])
        throw ShapeError("adaptive_avg_pool: cannot pool " + to_string(xs) + " to " + std::to_string(out_h) + "x" +
                         std::to_string(out_w));
    const std::size_t planes = xs[0] * xs[1], ih = xs[2], iw = xs[3];
    auto bin = [](std::size_t i, std::size_t in, std::size_t out) {
        return std::pair<std::size_t, std::size_t>{i * in / out, ((i + 1) * in + out - 1) / out};
    };
    const auto& in = x.value();
    Tensor<T> out(Shape{xs[0], xs[1], out_h, out_w});
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t r = 0; r < out_h; ++r)
            for (std::size_t c = 0; c < out_w; ++c) {
                const auto [r0, r1] = bin(r, ih, out_h);
                const auto [c0, c1] = bin(c, iw, out_w);
                T s = 0;
                for (std::size_t i = r0; i < r1; ++i)
                    for (std::size_t j = c0; j < c1; ++j) s += in[(p * ih + i) * iw + j];
                out[(p * out_h + r) * out_w + c] = s / static_cast<T>((r1 - r0) * (c1 - c0));
            }
    return x.tape().record("adaptive_avg_pool", {x}, std::move(out), [=](GradAccess<T>& g) {
        if (!g.needs(0)) return;
        const auto& up = g.upstream();
        auto& d = g.grad(0);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t r = 0; r < out_h; ++r)
                for (std::size_t c = 0; c < out_w; ++c) {
                    const auto [r0, r1] = bin(r, ih, out_h);
                    const auto [c0, c1] = bin(c, iw, out_w);
                    const T share = up[(p * out_h + r) * out_w + c] / static_cast<T>((r1 - r0) * (c1 - c0));
                    for (std::size_t i = r0; i < r1; ++i)
                        for (std::size_t j = c0; j < c1; ++j) d[(p * ih + i) * iw + j] += share;
                }
    });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels)
{
    require_rank("softmax_cross_entropy", "logits", logits, 2);
    const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
    if (labels.size() != rows)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         to_string(logits.shape()));
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= cols)
            throw UsageError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                             std::to_string(cols) + ")");
    const auto& z = logits.value();
    const auto lse = row_logsumexp(z, T{1});
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) total += lse[r] - z[r * cols + labels[r]];
    std::vector<int> y(labels.begin(), labels.end());
    return logits.tape().record("softmax_cross_entropy", {logits}, Tensor<T>::scalar(total / static_cast<T>(rows)),
                                [y = std::move(y), lse, rows, cols](GradAccess<T>& g) {
                                    if (!g.needs(0)) return;
                                    const T up = g.upstream()[0] / static_cast<T>(rows);
                                    const auto& z = g.input(0);
                                    auto& d = g.grad(0);
                                    for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t c = 0; c < cols; ++c) {
                                            const T p = std::exp(z[r * cols + c] - lse[r]);
                                            const T target = static_cast<std::size_t>(y[r]) == c ? T{1} : T{0};
                                            d[r * cols + c] += up * (p - target);
                                        }
                                });
}

template <typename T>
Var<T> kl_div_softened(Var<T> student_logits, const Tensor<T>& teacher_logits, T temperature)
{
    require_rank("kl_div_softened", "student logits", student_logits, 2);
    if (teacher_logits.shape() != student_logits.shape())
        throw ShapeError("kl_div_softened: teacher logits " + to_string(teacher_logits.shape()) +
                         " vs student logits " + to_string(student_logits.shape()));
    if (!(temperature > T{0})) throw UsageError("kl_div_softened: temperature must be positive");
    const auto& s = student_logits.value();
    const std::size_t rows = s.dim(0), cols = s.dim(1);
    const auto lse_s = row_logsumexp(s, temperature);
    const auto lse_t = row_logsumexp(teacher_logits, temperature);
    auto p_t = std::make_shared<Tensor<T>>(teacher_logits.shape());
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const T log_pt = teacher_logits[i] / temperature - lse_t[r];
            const T log_ps = s[i] / temperature - lse_s[r];
            (*p_t)[i] = std::exp(log_pt);
            total += (*p_t)[i] * (log_pt - log_ps);
        }
    return student_logits.tape().record(
        "kl_div_softened", {student_logits}, Tensor<T>::scalar(total / static_cast<T>(rows)),
        [p_t, lse_s, rows, cols, temperature](GradAccess<T>& g) {
            if (!g.needs(0)) return;
            const T up = g.upstream()[0] / (static_cast<T>(rows) * temperature);
            const auto& s = g.input(0);
            auto& d = g.grad(0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    const T p_s = std::exp(s[i] / temperature - lse_s[r]);
                    d[i] += up * (p_s - (*p_t)[i]);
                }
        });
}

#define AUXQ_INSTANTIATE(T)                                                                        \
    template Var<T> add(Var<T>, Var<T>);                                                           \
    template Var<T> mul(Var<T>, Var<T>);                                                           \
    template Var<T> sum(Var<T>);                                                                   \
    template Var<T> scale(Var<T>, T);                                                              \
    template Var<T> affine(Var<T>, T, T);                                                          \
    template Var<T> divide(Var<T>, T);                                                             \
    template Var<T> relu(Var<T>);                                                                  \
    template Var<T> tanh(Var<T>);                                                                  \
    template Var<T> clip(Var<T>, T, T);                                                            \
    template Var<T> round(Var<T>);                                                                 \
    template Var<T> sign(Var<T>);                                                                  \
    template Var<T> matmul(Var<T>, Var<T>);                                                        \
    template Var<T> conv2d(Var<T>, Var<T>, Conv2dAttrs);                                           \
    template Var<T> batchnorm(Var<T>, Var<T>, Var<T>, BatchNormState<T>&, bool);                   \
    template Var<T> global_avg_pool(Var<T>);                                                       \
    template Var<T> adaptive_avg_pool(Var<T>, std::size_t, std::size_t);                           \
    template Var<T> softmax_cross_entropy(Var<T>, std::span<const int>);                           \
    template Var<T> kl_div_softened(Var<T>, const Tensor<T>&, T);

AUXQ_INSTANTIATE(float)
AUXQ_INSTANTIATE(double)

#undef AUXQ_INSTANTIATE

}  // namespace ops

template Tensor<float> softmax_rows(const Tensor<float>&, float);
template Tensor<double> softmax_rows(const Tensor<double>&, double);

}  // namespace auxq
