#include "auxq/auxiliary.hpp"

#include "auxq/errors.hpp"
#include "auxq/random.hpp"

namespace auxq {

AuxiliarySpec AuxiliarySpec::for_backbone(const NetworkSpec& backbone, std::size_t kernel, std::size_t width)
{
    AuxiliarySpec s;
    s.adaptors.assign(backbone.tap_indices.size(), AdaptorSpec{kernel, width});
    s.width = width;
    s.num_classes = backbone.num_classes;
    return s;
}

std::vector<std::string> AuxiliarySpec::validate(const NetworkSpec& backbone) const
{
    std::vector<std::string> errs;
    if (adaptors.size() != backbone.tap_indices.size())
        errs.push_back("auxiliary has " + std::to_string(adaptors.size()) + " adaptors but the backbone exposes " +
                       std::to_string(backbone.tap_indices.size()) + " taps");
    if (adaptors.empty()) errs.push_back("auxiliary needs at least one adaptor");
    if (width == 0) errs.push_back("auxiliary width must be positive");
    if (num_classes != backbone.num_classes)
        errs.push_back("auxiliary num_classes " + std::to_string(num_classes) + " differs from backbone " +
                       std::to_string(backbone.num_classes));
    for (std::size_t p = 0; p < adaptors.size(); ++p) {
        const auto& a = adaptors[p];
        const std::string where = "adaptors[" + std::to_string(p) + "]";
        if (a.kernel != 1 && a.kernel != 3) errs.push_back(where + ".kernel must be 1 or 3");
        if (a.out_channels != width)
            errs.push_back(where + ".out_channels " + std::to_string(a.out_channels) + " must equal width " +
                           std::to_string(width));
    }
    return errs;
}

namespace {

std::vector<std::string> check_taps(const AuxiliarySpec& spec, const std::vector<TapInfo>& taps)
{
    std::vector<std::string> errs;
    if (taps.size() != spec.adaptors.size())
        errs.push_back("auxiliary has " + std::to_string(spec.adaptors.size()) + " adaptors for " +
                       std::to_string(taps.size()) + " taps");
    for (std::size_t p = 1; p < taps.size(); ++p)
        if (taps[p].height > taps[p - 1].height || taps[p].width > taps[p - 1].width)
            errs.push_back("tap " + std::to_string(p + 1) + " is spatially larger than tap " + std::to_string(p));
    return errs;
}

}  // namespace

template <typename T>
AuxiliaryModule<T>::AuxiliaryModule(AuxiliarySpec spec, std::vector<TapInfo> taps, std::uint64_t seed)
    : spec_(std::move(spec)), taps_(std::move(taps))
{
    auto errs = check_taps(spec_, taps_);
    if (spec_.width == 0) errs.push_back("auxiliary width must be positive");
    for (std::size_t p = 0; p < spec_.adaptors.size(); ++p) {
        const auto& a = spec_.adaptors[p];
        if (a.kernel != 1 && a.kernel != 3) errs.push_back("adaptors[" + std::to_string(p) + "].kernel must be 1 or 3");
        if (a.out_channels != spec_.width)
            errs.push_back("adaptors[" + std::to_string(p) + "].out_channels must equal width");
    }
    if (!errs.empty()) throw ValidationError(std::move(errs));

    params_.reserve(3 * taps_.size() + 1);
    for (std::size_t p = 0; p < taps_.size(); ++p) {
        const std::string base = "aux.adaptors." + std::to_string(p);
        const auto k = spec_.adaptors[p].kernel;
        params_.push_back({base + ".conv.weight", Tensor<T>(Shape{spec_.width, taps_[p].channels, k, k})});
        params_.push_back({base + ".bn.gamma", Tensor<T>(Shape{spec_.width}, T{1})});
        params_.push_back({base + ".bn.beta", Tensor<T>(Shape{spec_.width}, T{0})});
        bn_names_.push_back(base + ".bn");
        bn_.emplace_back(spec_.width);
    }
    params_.push_back({"aux.classifier.weight", Tensor<T>(Shape{spec_.num_classes, spec_.width})});

    auto rng = make_stream(seed, "aux_init");
    for (auto& prm : params_) {
        if (!prm.name.ends_with(".weight")) continue;
        const auto& s = prm.value.shape();
        he_normal(prm.value, numel(s) / s[0], rng);
    }
}

template <typename T>
Parameter<T>* AuxiliaryModule<T>::find_parameter(std::string_view name)
{
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

template <typename T>
Var<T> aggregate(Var<T> adapted, Var<T> prev, std::size_t p)
{
    if (adapted.shape() != prev.shape())
        throw ShapeError("aggregate: tap " + std::to_string(p) + " adapted feature " + to_string(adapted.shape()) +
                         " does not match previous aggregate " + to_string(prev.shape()));
    return ops::relu(ops::add(adapted, prev));
}

template <typename T>
Var<T> AuxiliaryModule<T>::forward(Tape<T>& tape, std::span<const Var<T>> taps, Mode mode)
{
    if (taps.size() != taps_.size())
        throw ValidationError({"auxiliary expects " + std::to_string(taps_.size()) + " taps, got " +
                               std::to_string(taps.size())});
    Var<T> g;
    for (std::size_t p = 0; p < taps.size(); ++p) {
        const auto& info = taps_[p];
        const auto& s = taps[p].shape();
        if (s.size() != 4 || s[1] != info.channels || s[2] != info.height || s[3] != info.width)
            throw ValidationError({"tap " + std::to_string(p + 1) + " has shape " + to_string(s) + ", expected [Nx" +
                                   std::to_string(info.channels) + "x" + std::to_string(info.height) + "x" +
                                   std::to_string(info.width) + "]"});
        const auto k = spec_.adaptors[p].kernel;
        auto w = tape.parameter(params_[3 * p]);
        auto a = ops::conv2d(taps[p], w, Conv2dAttrs{1, k / 2});
        a = ops::batchnorm(a, tape.parameter(params_[3 * p + 1]), tape.parameter(params_[3 * p + 2]), bn_[p],
                           mode == Mode::Train);
        Var<T> prev;
        if (!g.valid()) {
            prev = tape.constant(Tensor<T>(a.shape()));
        } else {
            prev = g;
            if (g.shape()[2] != info.height || g.shape()[3] != info.width)
                prev = ops::adaptive_avg_pool(g, info.height, info.width);
        }
        g = aggregate(a, prev, p + 1);
    }
    return ops::matmul(ops::global_avg_pool(g), tape.parameter(params_.back()));
}

template <typename T>
std::vector<LayerAudit> AuxiliaryModule<T>::audit() const
{
    std::vector<LayerAudit> rows;
    for (std::size_t p = 0; p < taps_.size(); ++p)
        rows.push_back({"aux.adaptors." + std::to_string(p) + ".conv", LayerRole::Interior, QuantScheme::full(),
                        QuantScheme::full()});
    rows.push_back({"aux.classifier", LayerRole::Interior, QuantScheme::full(), QuantScheme::full()});
    return rows;
}

template <typename T>
MixedOutput<T> forward_mixed(Network<T>& net, AuxiliaryModule<T>& aux, Tape<T>& tape, Var<T> x, Mode mode)
{
    if (net.tap_signature() != aux.tap_signature())
        throw ValidationError({"auxiliary module was built for a different tap signature than network '" +
                               net.spec().name + "'"});
    MixedOutput<T> out;
    out.backbone = net.forward(tape, x, mode);
    out.y_main = out.backbone.logits;
    out.y_aux = aux.forward(tape, out.backbone.taps, mode);
    return out;
}

template <typename T>
JointLoss<T> joint_loss(Var<T> y_main, Var<T> y_aux, std::span<const int> labels)
{
    if (y_main.shape().empty() || y_aux.shape().empty() || y_main.shape()[0] != y_aux.shape()[0])
        throw ShapeError("joint_loss: batch sizes differ (" + to_string(y_main.shape()) + " vs " +
                         to_string(y_aux.shape()) + ")");
    return {ops::softmax_cross_entropy(y_main, labels), ops::softmax_cross_entropy(y_aux, labels)};
}

template <typename T>
JointGradientReport<T> joint_backward(Tape<T>& tape, const JointLoss<T>& loss, const Network<T>& net,
                                      const AuxiliaryModule<T>& aux, T aux_weight)
{
    const auto g_main = tape.backward(loss.main);
    const auto g_aux = tape.backward(aux_weight == T{1} ? loss.aux : ops::scale(loss.aux, aux_weight));

    JointGradientReport<T> report;
    for (const auto& p : net.parameters()) {
        JointGradient<T> j;
        j.shared = true;
        auto m = g_main.find(p.name);
        auto a = g_aux.find(p.name);
        j.g_main = m != g_main.end() ? m->second : Tensor<T>(p.value.shape());
        j.g_aux = a != g_aux.end() ? a->second : Tensor<T>(p.value.shape());
        j.g_applied = Tensor<T>(p.value.shape());
        for (std::size_t i = 0; i < j.g_applied.size(); ++i)
            j.g_applied[i] = T{0.5} * (j.g_main[i] + j.g_aux[i]);
        report.emplace(p.name, std::move(j));
    }
    for (const auto& p : aux.parameters()) {
        JointGradient<T> j;
        auto a = g_aux.find(p.name);
        j.g_aux = a != g_aux.end() ? a->second : Tensor<T>(p.value.shape());
        j.g_applied = j.g_aux;
        report.emplace(p.name, std::move(j));
    }
    return report;
}

template <typename T>
GradientMap<T> joint_gradients(Tape<T>& tape, const JointLoss<T>& loss, const AuxiliaryModule<T>& aux)
{
    const Seed<T> seeds[] = {{loss.main, T{0.5}}, {loss.aux, T{0.5}}};
    auto grads = tape.backward(std::span<const Seed<T>>(seeds));
    for (const auto& p : aux.parameters())
        if (auto it = grads.find(p.name); it != grads.end())
            for (auto& v : it->second.data()) v *= T{2};
    return grads;
}

template <typename T>
ClassifierHeads<T>::ClassifierHeads(std::vector<std::size_t> tap_positions, const std::vector<TapInfo>& taps,
                                    std::size_t num_classes, std::uint64_t seed)
    : positions_(std::move(tap_positions))
{
    std::vector<std::string> errs;
    for (auto p : positions_)
        if (p >= taps.size())
            errs.push_back("head tap position " + std::to_string(p) + " outside [0, " + std::to_string(taps.size()) +
                           ")");
    if (!errs.empty()) throw ValidationError(std::move(errs));
    auto rng = make_stream(seed, "heads_init");
    params_.reserve(positions_.size());
    for (std::size_t i = 0; i < positions_.size(); ++i) {
        Tensor<T> w(Shape{num_classes, taps[positions_[i]].channels});
        he_normal(w, w.dim(1), rng);
        params_.push_back({"heads." + std::to_string(i) + ".weight", std::move(w)});
    }
}

template <typename T>
std::vector<Var<T>> ClassifierHeads<T>::forward(Tape<T>& tape, std::span<const Var<T>> taps)
{
    std::vector<Var<T>> out;
    for (std::size_t i = 0; i < positions_.size(); ++i) {
        if (positions_[i] >= taps.size())
            throw ShapeError("classifier head " + std::to_string(i) + " reads tap " + std::to_string(positions_[i]) +
                             " but only " + std::to_string(taps.size()) + " taps were given");
        out.push_back(ops::matmul(ops::global_avg_pool(taps[positions_[i]]), tape.parameter(params_[i])));
    }
    return out;
}

template <typename T>
AdditionalLoss<T> additional_loss_baseline(Var<T> main_loss, ClassifierHeads<T>& heads, std::span<const Var<T>> taps,
                                           std::span<const int> labels, std::span<const double> alphas)
{
    if (alphas.size() != heads.tap_positions().size())
        throw UsageError("additional_loss: " + std::to_string(alphas.size()) + " weights for " +
                         std::to_string(heads.tap_positions().size()) + " heads");
    for (std::size_t i = 0; i < alphas.size(); ++i)
        if (!(alphas[i] >= 0.0))
            throw UsageError("additional_loss: weight " + std::to_string(i) + " is negative");

    AdditionalLoss<T> out;
    out.total = main_loss;
    auto logits = heads.forward(main_loss.tape(), taps);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        auto l = ops::softmax_cross_entropy(logits[i], labels);
        out.head_losses.push_back(l);
        out.total = ops::add(out.total, ops::scale(l, static_cast<T>(alphas[i])));
    }
    return out;
}

template <typename T>
DistillationLoss<T> kd_baseline(Var<T> student_logits, Network<T>& teacher, const Tensor<T>& x,
                                std::span<const int> labels, double beta, double temperature)
{
    if (!teacher.frozen()) throw UsageError("kd: teacher network must be frozen");
    if (!teacher.spec().policy.is_full()) throw UsageError("kd: teacher network must be full precision");
    if (beta < 0.0) throw UsageError("kd: beta must be non-negative");
    if (!(temperature > 0.0)) throw UsageError("kd: temperature must be positive");
    if (student_logits.shape().size() != 2 || student_logits.shape()[1] != teacher.spec().num_classes)
        throw ShapeError("kd: student logits " + to_string(student_logits.shape()) + " vs teacher with " +
                         std::to_string(teacher.spec().num_classes) + " classes");

    DistillationLoss<T> out;
    {
        Tape<T> side;
        out.teacher_logits = teacher.forward(side, side.constant(x), Mode::Eval).logits.value();
    }
    const T t = static_cast<T>(temperature);
    out.task = ops::softmax_cross_entropy(student_logits, labels);
    out.distill = ops::kl_div_softened(student_logits, out.teacher_logits, t);
    out.total = ops::add(out.task, ops::scale(out.distill, static_cast<T>(beta) * t * t));
    return out;
}

#define AUXQ_INSTANTIATE(T)                                                                                          \
    template class AuxiliaryModule<T>;                                                                               \
    template class ClassifierHeads<T>;                                                                               \
    template Var<T> aggregate(Var<T>, Var<T>, std::size_t);                                                          \
    template MixedOutput<T> forward_mixed(Network<T>&, AuxiliaryModule<T>&, Tape<T>&, Var<T>, Mode);                 \
    template JointLoss<T> joint_loss(Var<T>, Var<T>, std::span<const int>);                                          \
    template JointGradientReport<T> joint_backward(Tape<T>&, const JointLoss<T>&, const Network<T>&,                 \
                                                   const AuxiliaryModule<T>&, T);                                    \
    template GradientMap<T> joint_gradients(Tape<T>&, const JointLoss<T>&, const AuxiliaryModule<T>&);               \
    template AdditionalLoss<T> additional_loss_baseline(Var<T>, ClassifierHeads<T>&, std::span<const Var<T>>,        \
                                                        std::span<const int>, std::span<const double>);              \
    template DistillationLoss<T> kd_baseline(Var<T>, Network<T>&, const Tensor<T>&, std::span<const int>, double,    \
                                             double);

AUXQ_INSTANTIATE(float)
AUXQ_INSTANTIATE(double)

#undef AUXQ_INSTANTIATE

}  // namespace auxq
