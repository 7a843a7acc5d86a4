#include "auxq/network.hpp"

#include "auxq/errors.hpp"
#include "auxq/random.hpp"

#include <algorithm>

namespace auxq {

std::string_view to_string(BlockKind kind)
{
    return kind == BlockKind::Residual ? "residual" : "plain";
}

std::string_view to_string(LayerRole role)
{
    switch (role) {
    case LayerRole::First: return "first";
    case LayerRole::Interior: return "interior";
    case LayerRole::Last: return "last";
    }
    return "?";
}

namespace {

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride)
{
    const std::size_t pad = kernel / 2;
    return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace

std::vector<std::string> NetworkSpec::validate() const
{
    std::vector<std::string> errs;
    if (in_channels == 0 || in_height == 0 || in_width == 0) errs.push_back("input dimensions must be positive");
    if (num_classes < 2) errs.push_back("num_classes must be at least 2");
    if (stem.out_channels == 0) errs.push_back("stem.out_channels must be positive");
    if (stem.kernel == 0 || stem.kernel % 2 == 0) errs.push_back("stem.kernel must be odd");
    if (stem.stride == 0) errs.push_back("stem.stride must be positive");
    if (blocks.empty()) errs.push_back("at least one block is required");

    std::size_t channels = stem.out_channels;
    std::size_t h = in_height, w = in_width;
    if (stem.stride > 0 && stem.kernel % 2 == 1 && h > 0 && w > 0) {
        h = conv_out(h, stem.kernel, stem.stride);
        w = conv_out(w, stem.kernel, stem.stride);
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const std::string where = "blocks[" + std::to_string(i) + "]";
        if (b.in_channels != channels)
            errs.push_back(where + ".in_channels is " + std::to_string(b.in_channels) + " but the previous layer emits " +
                           std::to_string(channels));
        if (b.out_channels == 0) errs.push_back(where + ".out_channels must be positive");
        if (b.stride == 0) {
            errs.push_back(where + ".stride must be positive");
        } else {
            h = conv_out(h, 3, b.stride);
            w = conv_out(w, 3, b.stride);
        }
        channels = b.out_channels;
    }
    if (h == 0 || w == 0) errs.push_back("spatial size collapses to zero");

    for (std::size_t i = 0; i < tap_indices.size(); ++i) {
        if (tap_indices[i] >= blocks.size())
            errs.push_back("tap_indices[" + std::to_string(i) + "] = " + std::to_string(tap_indices[i]) +
                           " is outside [0, " + std::to_string(blocks.size()) + ")");
        if (i > 0 && tap_indices[i] <= tap_indices[i - 1]) errs.push_back("tap_indices must be strictly increasing");
    }
    return errs;
}

NetworkSpec NetworkSpec::preset(std::string_view name, std::size_t in_channels, std::size_t height, std::size_t width,
                                std::size_t num_classes)
{
    BlockKind kind;
    if (name == "plain4")
        kind = BlockKind::Plain;
    else if (name == "res4")
        kind = BlockKind::Residual;
    else
        throw UsageError("unknown network preset '" + std::string(name) + "' (expected plain4 or res4)");

    NetworkSpec s;
    s.name = std::string(name);
    s.in_channels = in_channels;
    s.in_height = height;
    s.in_width = width;
    s.num_classes = num_classes;
    s.stem = {16, 3, 1};
    s.blocks = {{16, 16, 2, kind}, {16, 32, 2, kind}, {32, 64, 2, kind}, {64, 64, 1, kind}};
    s.tap_indices = {0, 1, 2, 3};
    return s;
}

template <typename T>
Network<T>::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec))
{
    if (auto errs = spec_.validate(); !errs.empty()) throw ValidationError(std::move(errs));

    // Upper bound so parameter addresses never move after construction.
    params_.reserve(3 + spec_.blocks.size() * 9 + 1);
    auto rng = make_stream(seed, "init");

    stem_ = add_conv("stem", spec_.in_channels, spec_.stem.out_channels, spec_.stem.kernel, spec_.stem.stride,
                     LayerRole::First);
    std::size_t h = conv_out(spec_.in_height, spec_.stem.kernel, spec_.stem.stride);
    std::size_t w = conv_out(spec_.in_width, spec_.stem.kernel, spec_.stem.stride);

    for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
        const auto& b = spec_.blocks[i];
        const std::string prefix = "blocks." + std::to_string(i);
        BlockUnits units;
        units.kind = b.kind;
        units.conv1 = add_conv(prefix + ".conv1", b.in_channels, b.out_channels, 3, b.stride, LayerRole::Interior);
        units.conv2 = add_conv(prefix + ".conv2", b.out_channels, b.out_channels, 3, 1, LayerRole::Interior);
        if (b.kind == BlockKind::Residual && (b.in_channels != b.out_channels || b.stride != 1)) {
            units.has_projection = true;
            units.projection =
                add_conv(prefix + ".proj", b.in_channels, b.out_channels, 1, b.stride, LayerRole::Interior);
        }
        blocks_.push_back(std::move(units));
        h = conv_out(h, 3, b.stride);
        w = conv_out(w, 3, b.stride);
        if (std::find(spec_.tap_indices.begin(), spec_.tap_indices.end(), i) != spec_.tap_indices.end())
            taps_.push_back({i, b.out_channels, h, w});
    }

    const std::size_t features = spec_.blocks.back().out_channels;
    fc_ = params_.size();
    params_.push_back({"fc.weight", Tensor<T>(Shape{spec_.num_classes, features})});

    // Initialize in declaration order so the draw sequence depends only on the spec.
    for (auto& p : params_) {
        const auto& s = p.value.shape();
        if (p.name.ends_with(".gamma"))
            p.value.fill(T{1});
        else if (p.name.ends_with(".beta"))
            p.value.fill(T{0});
        else
            he_normal(p.value, numel(s) / s[0], rng);
    }
}

template <typename T>
typename Network<T>::ConvUnit Network<T>::add_conv(const std::string& name, std::size_t in, std::size_t out,
                                                   std::size_t kernel, std::size_t stride, LayerRole role)
{
    ConvUnit u;
    u.name = name;
    u.stride = stride;
    u.pad = kernel / 2;
    u.role = role;
    const std::string bn_name = name + ".bn";
    u.weight = params_.size();
    params_.push_back({name + ".weight", Tensor<T>(Shape{out, in, kernel, kernel})});
    u.gamma = params_.size();
    params_.push_back({bn_name + ".gamma", Tensor<T>(Shape{out})});
    u.beta = params_.size();
    params_.push_back({bn_name + ".beta", Tensor<T>(Shape{out})});
    u.bn = bn_.size();
    bn_names_.push_back(bn_name);
    bn_.emplace_back(out);
    return u;
}

template <typename T>
QuantScheme Network<T>::weight_scheme(LayerRole role) const
{
    switch (role) {
    case LayerRole::First: return spec_.policy.first_layer;
    case LayerRole::Last: return spec_.policy.last_layer;
    case LayerRole::Interior: return spec_.policy.interior;
    }
    return spec_.policy.interior;
}

template <typename T>
Var<T> Network<T>::conv_bn(Tape<T>& tape, const ConvUnit& u, Var<T> x, Mode mode, ForwardTrace<T>* trace)
{
    auto w = quant::apply_weight_scheme(tape.parameter(params_[u.weight]), weight_scheme(u.role));
    if (trace) {
        trace->layer_inputs.emplace_back(u.name, x.value());
        trace->weights_used.emplace(params_[u.weight].name, w.value());
    }
    auto y = ops::conv2d(x, w, Conv2dAttrs{u.stride, u.pad});
    return ops::batchnorm(y, tape.parameter(params_[u.gamma]), tape.parameter(params_[u.beta]), bn_[u.bn],
                          mode == Mode::Train);
}

template <typename T>
Var<T> Network<T>::activate(Var<T> x)
{
    // A sign quantizer follows BN directly; a ReLU in front of it would pin every output to +1.
    if (spec_.policy.activation.kind == SchemeKind::Binary) return quant::binarize(x);
    return quant::apply_activation_scheme(ops::relu(x), spec_.policy.activation);
}

template <typename T>
BackboneOutput<T> Network<T>::forward(Tape<T>& tape, Var<T> x, Mode mode, ForwardTrace<T>* trace)
{
    const Shape expected{x.shape().empty() ? 0 : x.shape()[0], spec_.in_channels, spec_.in_height, spec_.in_width};
    if (x.shape().size() != 4 || x.shape() != expected)
        throw ShapeError("forward_backbone: input " + to_string(x.shape()) + " does not match stem input [Nx" +
                         std::to_string(spec_.in_channels) + "x" + std::to_string(spec_.in_height) + "x" +
                         std::to_string(spec_.in_width) + "]");

    BackboneOutput<T> out;
    auto h = activate(conv_bn(tape, stem_, x, mode, trace));
    std::size_t next_tap = 0;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        auto y = activate(conv_bn(tape, b.conv1, h, mode, trace));
        y = conv_bn(tape, b.conv2, y, mode, trace);
        if (b.kind == BlockKind::Residual)
            y = ops::add(y, b.has_projection ? conv_bn(tape, b.projection, h, mode, trace) : h);
        h = activate(y);
        if (next_tap < taps_.size() && taps_[next_tap].block == i) {
            out.taps.push_back(h);
            ++next_tap;
        }
    }

    auto pooled = ops::global_avg_pool(h);
    auto& fc = params_[fc_];
    auto w = quant::apply_weight_scheme(tape.parameter(fc), spec_.policy.last_layer);
    if (trace) {
        trace->layer_inputs.emplace_back("fc", pooled.value());
        trace->weights_used.emplace(fc.name, w.value());
    }
    out.logits = ops::matmul(pooled, w);
    return out;
}

template <typename T>
std::vector<LayerAudit> Network<T>::audit() const
{
    std::vector<LayerAudit> rows;
    rows.push_back({stem_.name, LayerRole::First, spec_.policy.first_layer, QuantScheme::full()});
    for (const auto& b : blocks_) {
        rows.push_back({b.conv1.name, LayerRole::Interior, spec_.policy.interior, spec_.policy.activation});
        rows.push_back({b.conv2.name, LayerRole::Interior, spec_.policy.interior, spec_.policy.activation});
        if (b.has_projection)
            rows.push_back({b.projection.name, LayerRole::Interior, spec_.policy.interior, spec_.policy.activation});
    }
    rows.push_back({"fc", LayerRole::Last, spec_.policy.last_layer, QuantScheme::full()});
    return rows;
}

template <typename T>
std::vector<TapInfo> Network<T>::tap_signature() const
{
    return taps_;
}

template <typename T>
std::size_t Network<T>::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

template <typename T>
Parameter<T>* Network<T>::find_parameter(std::string_view name)
{
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

template <typename T>
const Parameter<T>* Network<T>::find_parameter(std::string_view name) const
{
    for (const auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

template class Network<float>;
template class Network<double>;

}  // namespace auxq
