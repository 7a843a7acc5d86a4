#pragma once

#include "auxq/autodiff.hpp"

#include <string>
#include <string_view>

namespace auxq {

enum class SchemeKind { Full, UniformK, Binary };

struct QuantScheme {
    SchemeKind kind = SchemeKind::Full;
    int bits = 0;  // meaningful for UniformK only

    static QuantScheme full() { return {SchemeKind::Full, 0}; }
    static QuantScheme uniform(int k);
    static QuantScheme binary() { return {SchemeKind::Binary, 1}; }

    // "Full", "UniformK(2)", "Binary"
    std::string str() const;
    static QuantScheme parse(std::string_view text);

    friend bool operator==(const QuantScheme&, const QuantScheme&) = default;
};

struct PrecisionPolicy {
    QuantScheme first_layer = QuantScheme::full();
    QuantScheme last_layer = QuantScheme::full();
    QuantScheme interior = QuantScheme::full();
    QuantScheme activation = QuantScheme::full();

    static PrecisionPolicy full() { return {}; }
    // First conv and last dense at UniformK(8); everything else at `target`.
    static PrecisionPolicy standard(QuantScheme target);

    bool is_full() const;

    friend bool operator==(const PrecisionPolicy&, const PrecisionPolicy&) = default;
};

namespace quant {

inline constexpr int kMaxUniformBits = 16;
inline constexpr double kDegenerateMax = 1e-12;

// round((2^k - 1) x) / (2^k - 1), rounding half away from zero.
template <typename T>
T quantize_unit_value(T x, int k);

// Installs the straight-through rules on a tape: identity for "round",
// upstream * 1{|x| <= 1} for "sign". Leaves rules the caller registered alone.
// Every quantizer below calls this on the tape it records onto.
template <typename T>
void install_ste(Tape<T>& tape);

// x must already lie in [0, 1]; debug builds check it.
template <typename T>
Var<T> quantize_unit(Var<T> x, int k);

// 2 * quantize_unit(tanh(w) / (2 max|tanh(w)|) + 1/2, k) - 1, one max per tensor.
// The max enters backward as a constant. A tensor with max|tanh(w)| < 1e-12
// maps to zeros with zero gradient.
template <typename T>
Var<T> quantize_weight(Var<T> w, int k);

// quantize_unit(clip(a, 0, 1), k)
template <typename T>
Var<T> quantize_activation(Var<T> a, int k);

// sign(x) with sign(0) = +1; gradient passes where |x| <= 1.
template <typename T>
Var<T> binarize(Var<T> x);

template <typename T>
Var<T> apply_weight_scheme(Var<T> w, const QuantScheme& scheme);
template <typename T>
Var<T> apply_activation_scheme(Var<T> a, const QuantScheme& scheme);

}  // namespace quant

}  // namespace auxq
