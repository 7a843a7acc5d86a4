#include "auxq/quant.hpp"

#include "auxq/errors.hpp"
#include "auxq/log.hpp"
#include "auxq/ops.hpp"

#include <charconv>
#include <cmath>

namespace auxq {

QuantScheme QuantScheme::uniform(int k)
{
    if (k < 1 || k > quant::kMaxUniformBits)
        throw UsageError("UniformK: bitwidth " + std::to_string(k) + " outside [1, " +
                         std::to_string(quant::kMaxUniformBits) + "]");
    return {SchemeKind::UniformK, k};
}

std::string QuantScheme::str() const
{
    switch (kind) {
    case SchemeKind::Full: return "Full";
    case SchemeKind::Binary: return "Binary";
    case SchemeKind::UniformK: return "UniformK(" + std::to_string(bits) + ")";
    }
    return "?";
}

QuantScheme QuantScheme::parse(std::string_view text)
{
    if (text == "Full" || text == "full") return full();
    if (text == "Binary" || text == "binary") return binary();
    for (std::string_view prefix : {"UniformK(", "uniform("}) {
        if (text.starts_with(prefix) && text.ends_with(")")) {
            const auto digits = text.substr(prefix.size(), text.size() - prefix.size() - 1);
            int k = 0;
            const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
            if (ec == std::errc{} && ptr == digits.data() + digits.size()) return uniform(k);
        }
    }
    throw UsageError("unknown quantization scheme '" + std::string(text) + "'");
}

PrecisionPolicy PrecisionPolicy::standard(QuantScheme target)
{
    if (target.kind == SchemeKind::Full) return full();
    return {QuantScheme::uniform(8), QuantScheme::uniform(8), target, target};
}

bool PrecisionPolicy::is_full() const
{
    return first_layer.kind == SchemeKind::Full && last_layer.kind == SchemeKind::Full &&
           interior.kind == SchemeKind::Full && activation.kind == SchemeKind::Full;
}

namespace quant {

namespace {

void check_bits(int k)
{
    if (k < 1 || k > kMaxUniformBits)
        throw UsageError("quantizer: bitwidth " + std::to_string(k) + " outside [1, " +
                         std::to_string(kMaxUniformBits) + "]");
}

template <typename T>
T levels(int k)
{
    return static_cast<T>((std::uint32_t{1} << k) - 1);
}

}  // namespace

template <typename T>
T quantize_unit_value(T x, int k)
{
    check_bits(k);
    const T n = levels<T>(k);
    return std::round(x * n) / n;
}

template <typename T>
void install_ste(Tape<T>& tape)
{
    if (!tape.has_custom_backward("round"))
        tape.register_custom_backward("round", [](const BackwardContext<T>&, const Tensor<T>& up) {
            return std::vector<Tensor<T>>{up};
        });
    if (!tape.has_custom_backward("sign"))
        tape.register_custom_backward("sign", [](const BackwardContext<T>& ctx, const Tensor<T>& up) {
            const auto& x = *ctx.inputs[0];
            Tensor<T> dx(x.shape());
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = std::abs(x[i]) <= T{1} ? up[i] : T{0};
            return std::vector<Tensor<T>>{std::move(dx)};
        });
}

template <typename T>
Var<T> quantize_unit(Var<T> x, int k)
{
    check_bits(k);
#ifndef NDEBUG
    for (T v : x.value().data())
        if (!(v >= T{0} && v <= T{1}))
            throw UsageError("quantize_unit: input " + std::to_string(v) + " outside [0, 1]");
#endif
    install_ste(x.tape());
    const T n = levels<T>(k);
    return ops::divide(ops::round(ops::scale(x, n)), n);
}

template <typename T>
Var<T> quantize_weight(Var<T> w, int k)
{
    check_bits(k);
    auto t = ops::tanh(w);
    T max_abs = 0;
    for (T v : t.value().data()) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs < static_cast<T>(kDegenerateMax)) {
        log::warn("quantize_weight: max|tanh(w)| below 1e-12 on a tensor of shape " + to_string(w.shape()) +
                  "; emitting zeros");
        return ops::affine(t, T{0}, T{0});
    }
    auto unit = ops::affine(ops::divide(t, T{2} * max_abs), T{1}, T{0.5});
    return ops::affine(quantize_unit(unit, k), T{2}, T{-1});
}

template <typename T>
Var<T> quantize_activation(Var<T> a, int k)
{
    return quantize_unit(ops::clip(a, T{0}, T{1}), k);
}

template <typename T>
Var<T> binarize(Var<T> x)
{
    install_ste(x.tape());
    return ops::sign(x);
}

template <typename T>
Var<T> apply_weight_scheme(Var<T> w, const QuantScheme& scheme)
{
    switch (scheme.kind) {
    case SchemeKind::Full: return w;
    case SchemeKind::UniformK: return quantize_weight(w, scheme.bits);
    case SchemeKind::Binary: return binarize(w);
    }
    return w;
}

template <typename T>
Var<T> apply_activation_scheme(Var<T> a, const QuantScheme& scheme)
{
    switch (scheme.kind) {
    case SchemeKind::Full: return a;
    case SchemeKind::UniformK: return quantize_activation(a, scheme.bits);
    case SchemeKind::Binary: return binarize(a);
    }
    return a;
}

#define AUXQ_INSTANTIATE(T)                                                      \
    template T quantize_unit_value(T, int);                                      \
    template void install_ste(Tape<T>&);                                         \
    template Var<T> quantize_unit(Var<T>, int);                                  \
    template Var<T> quantize_weight(Var<T>, int);                                \
    template Var<T> quantize_activation(Var<T>, int);                            \
    template Var<T> binarize(Var<T>);                                            \
    template Var<T> apply_weight_scheme(Var<T>, const QuantScheme&);             \
    template Var<T> apply_activation_scheme(Var<T>, const QuantScheme&);

AUXQ_INSTANTIATE(float)
AUXQ_INSTANTIATE(double)

#undef AUXQ_INSTANTIATE

}  // namespace quant

}  // namespace auxq
