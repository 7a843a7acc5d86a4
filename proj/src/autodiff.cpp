#include "auxq/autodiff.hpp"

#include "auxq/errors.hpp"

#include <algorithm>
#include <array>

namespace auxq {

namespace {

constexpr std::array<std::string_view, 19> kKnownOps = {
    "leaf",   "add",    "mul",     "sum",    "scale",           "affine",          "divide",
    "relu",   "tanh",   "clip",    "round",  "sign",            "matmul",          "conv2d",
    "batchnorm", "global_avg_pool", "adaptive_avg_pool", "softmax_cross_entropy", "kl_div_softened",
};

}  // namespace

std::span<const std::string_view> known_ops() { return kKnownOps; }

template <typename T>
const Tensor<T>& Var<T>::value() const
{
    if (!tape_) throw UsageError("var: use of an unbound variable");
    return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const
{
    return tape_ && tape_->requires_grad(id_);
}

template <typename T>
const Tensor<T>& GradAccess<T>::output() const
{
    return tape_->nodes_[node_].value;
}

template <typename T>
const Tensor<T>& GradAccess<T>::input(std::size_t i) const
{
    return tape_->nodes_[tape_->nodes_[node_].inputs.at(i)].value;
}

template <typename T>
bool GradAccess<T>::needs(std::size_t i) const
{
    return tape_->nodes_[tape_->nodes_[node_].inputs.at(i)].requires_grad;
}

template <typename T>
Tensor<T>& GradAccess<T>::grad(std::size_t i)
{
    return tape_->grad_slot(tape_->nodes_[node_].inputs.at(i));
}

template <typename T>
Var<T> Tape<T>::push(Node node)
{
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value)
{
    return push(Node{"leaf", std::move(value), {}, {}, nullptr, false});
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value)
{
    return push(Node{"leaf", std::move(value), {}, {}, nullptr, true});
}

template <typename T>
Var<T> Tape<T>::parameter(const Parameter<T>& p)
{
    if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>(this, it->second);
    if (auto it = bound_names_.find(p.name); it != bound_names_.end())
        throw UsageError("tape: two distinct parameters share the name '" + p.name + "'");
    auto v = push(Node{"leaf", p.value, {}, {}, &p, true});
    bound_.emplace(&p, v.id());
    bound_names_.emplace(p.name, &p);
    return v;
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, std::vector<Var<T>> inputs, Tensor<T> value, BuiltinBackward<T> backward)
{
    if (!all_finite(value))
        throw NumericFault("numeric fault: op '" + std::string(op) + "' produced a non-finite value (shape " +
                           to_string(value.shape()) + ")");
    Node node{std::string(op), std::move(value), {}, {}, nullptr, false};
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (in.tape_ != this) throw UsageError("tape: op '" + std::string(op) + "' mixes variables from two tapes");
        node.inputs.push_back(in.id());
        node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    return push(std::move(node));
}

template <typename T>
Tensor<T>& Tape<T>::grad_slot(std::size_t id)
{
    auto& slot = grads_[id];
    if (!slot) slot.emplace(nodes_[id].value.shape());
    return *slot;
}

template <typename T>
void Tape<T>::apply_custom(std::size_t id, const CustomRule& rule, const Tensor<T>& upstream)
{
    const Node& node = nodes_[id];
    BackwardContext<T> ctx{node.op, {}, &node.value};
    for (auto in : node.inputs) ctx.inputs.push_back(&nodes_[in].value);
    auto grads = rule.rule(ctx, upstream);
    if (grads.size() != node.inputs.size())
        throw NumericFault("numeric fault: custom backward for op '" + node.op + "' returned " +
                           std::to_string(grads.size()) + " gradients for " + std::to_string(node.inputs.size()) +
                           " inputs");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto& in = nodes_[node.inputs[i]];
        if (grads[i].shape() != in.value.shape())
            throw NumericFault("numeric fault: custom backward for op '" + node.op + "' returned gradient " +
                               to_string(grads[i].shape()) + " for input " + std::to_string(i) + " of shape " +
                               to_string(in.value.shape()));
        if (!in.requires_grad) continue;
        auto& acc = grad_slot(node.inputs[i]);
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += grads[i][j];
    }
}

template <typename T>
GradientMap<T> Tape<T>::backward(Var<T> loss)
{
    const Seed<T> seed{loss, T{1}};
    return backward(std::span<const Seed<T>>(&seed, 1));
}

template <typename T>
GradientMap<T> Tape<T>::backward(std::span<const Seed<T>> seeds)
{
    grads_.assign(nodes_.size(), std::nullopt);
    std::size_t top = 0;
    for (const auto& s : seeds) {
        if (s.root.tape_ != this) throw UsageError("backward: seed belongs to another tape");
        const auto& v = nodes_[s.root.id()].value;
        if (v.size() != 1) throw UsageError("backward: loss must be a scalar, got shape " + to_string(v.shape()));
        if (!nodes_[s.root.id()].requires_grad) continue;
        grad_slot(s.root.id())[0] += s.weight;
        top = std::max(top, s.root.id() + 1);
    }

    for (std::size_t id = top; id-- > 0;) {
        if (!grads_[id]) continue;
        const Node& node = nodes_[id];
        if (node.inputs.empty()) continue;
        for (auto in : node.inputs)
            if (in >= id) throw InternalError("backward: tape is not acyclic at op '" + node.op + "'");
        const Tensor<T>& upstream = *grads_[id];
        if (auto it = rules_.find(node.op); it != rules_.end()) {
            apply_custom(id, it->second, upstream);
        } else if (node.backward) {
            GradAccess<T> access(*this, id, upstream);
            node.backward(access);
        }
    }

    GradientMap<T> out;
    for (const auto& [param, id] : bound_)
        if (grads_[id]) out.emplace(param->name, *grads_[id]);
    return out;
}

template <typename T>
const Tensor<T>* Tape<T>::grad(Var<T> v) const
{
    if (v.tape_ != this || v.id() >= grads_.size() || !grads_[v.id()]) return nullptr;
    return &*grads_[v.id()];
}

template <typename T>
RuleHandle Tape<T>::register_custom_backward(std::string op, BackwardRule<T> rule)
{
    const auto ops = known_ops();
    if (op == "leaf" || std::find(ops.begin(), ops.end(), op) == ops.end())
        throw UsageError("register_custom_backward: unknown op '" + op + "'");
    const auto id = next_rule_id_++;
    rules_[op] = CustomRule{id, std::move(rule)};
    return RuleHandle{std::move(op), id};
}

template <typename T>
void Tape<T>::unregister(const RuleHandle& handle)
{
    if (auto it = rules_.find(handle.op); it != rules_.end() && it->second.id == handle.id) rules_.erase(it);
}

template <typename T>
bool Tape<T>::has_custom_backward(std::string_view op) const
{
    return rules_.contains(std::string(op));
}

template class Var<float>;
template class Var<double>;
template class GradAccess<float>;
template class GradAccess<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace auxq
