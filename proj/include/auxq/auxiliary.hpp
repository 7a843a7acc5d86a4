#pragma once

// Full-precision auxiliary module H and the training objectives built on it.
//
// H reads the quantized block outputs O_p of the backbone F. Each tap passes
// through an adaptor (conv 1x1 or 3x3 + BN) into a common width, and the
// adapted features are chained by
//
//     g_p = ReLU(adaptor_p(O_p) + g_{p-1}),   g_0 = 0,
//
// with g_{p-1} average-pooled down when tap p is spatially smaller. A global
// pool + dense classifier on g_P produces y_H. Every parameter of H stays in
// full precision, and H only reads the taps, so y_F is unaffected by its
// presence. H is dropped after training.

#include "auxq/network.hpp"

#include <map>
#include <optional>
#include <span>

namespace auxq {

struct AdaptorSpec {
    std::size_t kernel = 1;  // 1 or 3
    std::size_t out_channels = 64;

    friend bool operator==(const AdaptorSpec&, const AdaptorSpec&) = default;
};

struct AuxiliarySpec {
    std::vector<AdaptorSpec> adaptors;  // one per tap, in tap order
    std::size_t width = 64;
    std::size_t num_classes = 10;

    // One adaptor per tap of `backbone`, all with the same kernel and width.
    static AuxiliarySpec for_backbone(const NetworkSpec& backbone, std::size_t kernel = 1, std::size_t width = 64);

    std::vector<std::string> validate(const NetworkSpec& backbone) const;
};

template <typename T>
class AuxiliaryModule {
public:
    AuxiliaryModule(AuxiliarySpec spec, std::vector<TapInfo> taps, std::uint64_t seed);

    const AuxiliarySpec& spec() const noexcept { return spec_; }
    const std::vector<TapInfo>& tap_signature() const noexcept { return taps_; }

    std::vector<Parameter<T>>& parameters() noexcept { return params_; }
    const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
    std::vector<std::string>& batchnorm_names() noexcept { return bn_names_; }
    const std::vector<std::string>& batchnorm_names() const noexcept { return bn_names_; }
    std::vector<BatchNormState<T>>& batchnorm_states() noexcept { return bn_; }
    const std::vector<BatchNormState<T>>& batchnorm_states() const noexcept { return bn_; }
    Parameter<T>* find_parameter(std::string_view name);

    // y_H from the backbone taps.
    Var<T> forward(Tape<T>& tape, std::span<const Var<T>> taps, Mode mode);

    // Every layer of H with its weight scheme; always Full.
    std::vector<LayerAudit> audit() const;

private:
    AuxiliarySpec spec_;
    std::vector<TapInfo> taps_;
    std::vector<Parameter<T>> params_;
    std::vector<std::string> bn_names_;
    std::vector<BatchNormState<T>> bn_;
};

// g_p = ReLU(adapted + prev). `p` (1-based) is used in error messages.
template <typename T>
Var<T> aggregate(Var<T> adapted, Var<T> prev, std::size_t p);

template <typename T>
struct MixedOutput {
    BackboneOutput<T> backbone;
    Var<T> y_main;  // y_F
    Var<T> y_aux;   // y_H
};

template <typename T>
MixedOutput<T> forward_mixed(Network<T>& net, AuxiliaryModule<T>& aux, Tape<T>& tape, Var<T> x, Mode mode);

template <typename T>
struct JointLoss {
    Var<T> main;  // L = CE(y_F)
    Var<T> aux;   // L_aux = CE(y_H)
};

template <typename T>
JointLoss<T> joint_loss(Var<T> y_main, Var<T> y_aux, std::span<const int> labels);

template <typename T>
struct JointGradient {
    Tensor<T> g_main;     // dL/dtheta; empty for parameters of H
    Tensor<T> g_aux;      // dL_aux/dtheta (zeros where L_aux does not reach)
    Tensor<T> g_applied;  // what the optimizer receives
    bool shared = false;  // parameter of F
};

template <typename T>
using JointGradientReport = std::map<std::string, JointGradient<T>>;

// Two independent backward passes, then
//   F: g_applied = (g_main + g_aux) / 2
//   H: g_applied = g_aux
// `aux_weight` scales L_aux before differentiation (0 detaches H).
template <typename T>
JointGradientReport<T> joint_backward(Tape<T>& tape, const JointLoss<T>& loss, const Network<T>& net,
                                      const AuxiliaryModule<T>& aux, T aux_weight = T{1});

// The same gradients from one backward pass seeded with (1/2, 1/2); H's
// gradients are then doubled. Used by the trainer.
template <typename T>
GradientMap<T> joint_gradients(Tape<T>& tape, const JointLoss<T>& loss, const AuxiliaryModule<T>& aux);

// Comparison baseline: a global-pool + dense classifier on chosen taps,
// adding sum_i alpha_i * CE(head_i) to the main loss.
template <typename T>
class ClassifierHeads {
public:
    ClassifierHeads(std::vector<std::size_t> tap_positions, const std::vector<TapInfo>& taps,
                    std::size_t num_classes, std::uint64_t seed);

    const std::vector<std::size_t>& tap_positions() const noexcept { return positions_; }
    std::vector<Parameter<T>>& parameters() noexcept { return params_; }
    const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }

    // Logits of each head; `taps` is the full tap list of the backbone.
    std::vector<Var<T>> forward(Tape<T>& tape, std::span<const Var<T>> taps);

private:
    std::vector<std::size_t> positions_;
    std::vector<Parameter<T>> params_;
};

template <typename T>
struct AdditionalLoss {
    Var<T> total;
    std::vector<Var<T>> head_losses;
};

// total = main_loss + sum_i alphas[i] * CE(head_i). Rejects negative weights
// and a weight count that differs from the head count.
template <typename T>
AdditionalLoss<T> additional_loss_baseline(Var<T> main_loss, ClassifierHeads<T>& heads,
                                           std::span<const Var<T>> taps, std::span<const int> labels,
                                           std::span<const double> alphas);

template <typename T>
struct DistillationLoss {
    Var<T> total;
    Var<T> task;        // CE(student)
    Var<T> distill;     // KL(soft teacher || soft student)
    Tensor<T> teacher_logits;
};

// total = CE(student) + beta * t^2 * KL(softmax(teacher/t) || softmax(student/t)).
// The teacher runs in eval mode on its own tape; nothing flows back into it.
template <typename T>
DistillationLoss<T> kd_baseline(Var<T> student_logits, Network<T>& teacher, const Tensor<T>& x,
                                std::span<const int> labels, double beta, double temperature);

extern template class AuxiliaryModule<float>;
extern template class AuxiliaryModule<double>;
extern template class ClassifierHeads<float>;
extern template class ClassifierHeads<double>;

}  // namespace auxq
