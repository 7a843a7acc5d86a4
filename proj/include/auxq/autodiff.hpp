#pragma once

#include "auxq/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace auxq {

template <typename T>
class Tape;

// A trainable tensor. `value` is the latent full-precision master copy;
// quantized views are produced on the tape and never written back.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

// Parameter name -> gradient. Parameters the loss cannot reach are absent.
template <typename T>
using GradientMap = std::map<std::string, Tensor<T>>;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape<T>& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    friend class Tape<T>;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

// What a custom backward rule sees for one node.
template <typename T>
struct BackwardContext {
    std::string_view op;
    std::vector<const Tensor<T>*> inputs;
    const Tensor<T>* output = nullptr;
};

// Custom rule: (context, upstream grad) -> one grad per input, shapes matching the inputs.
template <typename T>
using BackwardRule = std::function<std::vector<Tensor<T>>(const BackwardContext<T>&, const Tensor<T>&)>;

// View handed to built-in backward closures while a node is being differentiated.
template <typename T>
class GradAccess {
public:
    const Tensor<T>& upstream() const { return *upstream_; }
    const Tensor<T>& output() const;
    const Tensor<T>& input(std::size_t i) const;
    bool needs(std::size_t i) const;
    // Accumulator for input i; zero-filled on first touch.
    Tensor<T>& grad(std::size_t i);

private:
    friend class Tape<T>;
    GradAccess(Tape<T>& tape, std::size_t node, const Tensor<T>& upstream)
        : tape_(&tape), node_(node), upstream_(&upstream)
    {
    }

    Tape<T>* tape_;
    std::size_t node_;
    const Tensor<T>* upstream_;
};

template <typename T>
using BuiltinBackward = std::function<void(GradAccess<T>&)>;

struct RuleHandle {
    std::string op;
    std::uint64_t id = 0;
};

// One root of a multi-root backward pass: d(sum_i weight_i * root_i).
template <typename T>
struct Seed {
    Var<T> root;
    T weight = T{1};
};

// Op ids accepted by register_custom_backward.
std::span<const std::string_view> known_ops();

// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
// is already a topological order and backward is a single reverse sweep.
// Not thread-safe; use one tape per thread.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value);
    Var<T> variable(Tensor<T> value);
    // Binding the same Parameter twice yields the same node.
    Var<T> parameter(const Parameter<T>& p);

    // Appends an op node. The value must already be computed. Throws
    // NumericFault when the value holds NaN or Inf.
    Var<T> record(std::string_view op, std::vector<Var<T>> inputs, Tensor<T> value, BuiltinBackward<T> backward);

    GradientMap<T> backward(Var<T> loss);
    GradientMap<T> backward(std::span<const Seed<T>> seeds);

    // Gradient of any node from the most recent backward call; nullptr if unreached.
    const Tensor<T>* grad(Var<T> v) const;

    RuleHandle register_custom_backward(std::string op, BackwardRule<T> rule);
    void unregister(const RuleHandle& handle);
    bool has_custom_backward(std::string_view op) const;

    std::size_t size() const noexcept { return nodes_.size(); }
    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    const std::string& op(std::size_t id) const { return nodes_.at(id).op; }

private:
    friend class GradAccess<T>;

    struct Node {
        std::string op;
        Tensor<T> value;
        std::vector<std::size_t> inputs;
        BuiltinBackward<T> backward;
        const Parameter<T>* param = nullptr;
        bool requires_grad = false;
    };

    struct CustomRule {
        std::uint64_t id;
        BackwardRule<T> rule;
    };

    Var<T> push(Node node);
    void apply_custom(std::size_t id, const CustomRule& rule, const Tensor<T>& upstream);
    Tensor<T>& grad_slot(std::size_t id);

    std::deque<Node> nodes_;
    std::vector<std::optional<Tensor<T>>> grads_;
    std::unordered_map<const Parameter<T>*, std::size_t> bound_;
    std::unordered_map<std::string, const Parameter<T>*> bound_names_;
    std::unordered_map<std::string, CustomRule> rules_;
    std::uint64_t next_rule_id_ = 1;
};

extern template class Tape<float>;
extern template class Tape<double>;
extern template class GradAccess<float>;
extern template class GradAccess<double>;
extern template class Var<float>;
extern template class Var<double>;

}  // namespace auxq
