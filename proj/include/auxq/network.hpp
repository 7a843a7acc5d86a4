#pragma once

#include "auxq/autodiff.hpp"
#include "auxq/ops.hpp"
#include "auxq/quant.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace auxq {

enum class BlockKind { Residual, Plain };
enum class Mode { Train, Eval };
enum class LayerRole { First, Interior, Last };

std::string_view to_string(BlockKind kind);
std::string_view to_string(LayerRole role);

struct StemSpec {
    std::size_t out_channels = 16;
    std::size_t kernel = 3;
    std::size_t stride = 1;
};

// Two 3x3 conv+BN pairs. Residual blocks add the block input (or a 1x1
// projection of it when channels or stride change) before the final ReLU.
struct BlockSpec {
    std::size_t in_channels = 16;
    std::size_t out_channels = 16;
    std::size_t stride = 1;
    BlockKind kind = BlockKind::Residual;
};

struct NetworkSpec {
    std::string name = "custom";
    std::size_t in_channels = 1;
    std::size_t in_height = 28;
    std::size_t in_width = 28;
    StemSpec stem;
    std::vector<BlockSpec> blocks;
    std::size_t num_classes = 10;
    PrecisionPolicy policy;
    // 0-based block positions whose outputs are exposed as taps. Strictly increasing.
    std::vector<std::size_t> tap_indices;

    // Every violation, empty when valid.
    std::vector<std::string> validate() const;

    // "plain4" / "res4": stem 16, blocks 16-32-64-64 with strides 2-2-2-1, taps on every block.
    static NetworkSpec preset(std::string_view name, std::size_t in_channels, std::size_t height, std::size_t width,
                              std::size_t num_classes);
};

struct TapInfo {
    std::size_t block = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    friend bool operator==(const TapInfo&, const TapInfo&) = default;
};

struct LayerAudit {
    std::string name;
    LayerRole role = LayerRole::Interior;
    QuantScheme weight_scheme;
    QuantScheme input_scheme;  // scheme of the activation the layer consumes
};

template <typename T>
struct BackboneOutput {
    Var<T> logits;
    std::vector<Var<T>> taps;
};

// Optional instrumentation filled by Network::forward.
template <typename T>
struct ForwardTrace {
    std::vector<std::pair<std::string, Tensor<T>>> layer_inputs;  // per weighted layer, in forward order
    std::map<std::string, Tensor<T>> weights_used;                 // weight tensors after quantization
};

template <typename T>
class Network {
public:
    Network(NetworkSpec spec, std::uint64_t seed);

    const NetworkSpec& spec() const noexcept { return spec_; }

    std::vector<Parameter<T>>& parameters() noexcept { return params_; }
    const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
    Parameter<T>* find_parameter(std::string_view name);
    const Parameter<T>* find_parameter(std::string_view name) const;

    std::vector<std::string>& batchnorm_names() noexcept { return bn_names_; }
    const std::vector<std::string>& batchnorm_names() const noexcept { return bn_names_; }
    std::vector<BatchNormState<T>>& batchnorm_states() noexcept { return bn_; }
    const std::vector<BatchNormState<T>>& batchnorm_states() const noexcept { return bn_; }

    // Quantizes the master weights onto the tape, then runs F. Training mode
    // uses batch statistics and moves the BN running statistics.
    BackboneOutput<T> forward(Tape<T>& tape, Var<T> x, Mode mode, ForwardTrace<T>* trace = nullptr);

    void set_policy(const PrecisionPolicy& policy) { spec_.policy = policy; }
    std::vector<LayerAudit> audit() const;
    std::vector<TapInfo> tap_signature() const;
    std::size_t parameter_count() const;

    // A frozen network may serve as a distillation teacher.
    bool frozen() const noexcept { return frozen_; }
    void set_frozen(bool frozen) noexcept { frozen_ = frozen; }

private:
    struct ConvUnit {
        std::string name;
        std::size_t weight = 0;
        std::size_t gamma = 0;
        std::size_t beta = 0;
        std::size_t bn = 0;
        std::size_t stride = 1;
        std::size_t pad = 0;
        LayerRole role = LayerRole::Interior;
    };
    struct BlockUnits {
        ConvUnit conv1;
        ConvUnit conv2;
        bool has_projection = false;
        ConvUnit projection;
        BlockKind kind = BlockKind::Residual;
    };

    ConvUnit add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                      std::size_t stride, LayerRole role);
    Var<T> conv_bn(Tape<T>& tape, const ConvUnit& unit, Var<T> x, Mode mode, ForwardTrace<T>* trace);
    Var<T> activate(Var<T> x);
    QuantScheme weight_scheme(LayerRole role) const;

    NetworkSpec spec_;
    std::vector<Parameter<T>> params_;
    std::vector<std::string> bn_names_;
    std::vector<BatchNormState<T>> bn_;
    ConvUnit stem_;
    std::vector<BlockUnits> blocks_;
    std::size_t fc_ = 0;
    std::vector<TapInfo> taps_;
    bool frozen_ = false;
};

template <typename T>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t seed)
{
    return Network<T>(spec, seed);
}

template <typename T>
BackboneOutput<T> forward_backbone(Network<T>& net, Tape<T>& tape, Var<T> x, Mode mode)
{
    return net.forward(tape, x, mode);
}

extern template class Network<float>;
extern template class Network<double>;

}  // namespace auxq
