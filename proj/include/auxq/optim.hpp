#pragma once

#include "auxq/autodiff.hpp"

#include <map>
#include <string>
#include <vector>

namespace auxq {

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-3;
    double momentum = 0.9;  // sgd
    double weight_decay = 0.0;
    double beta1 = 0.9;  // adam
    double beta2 = 0.999;
    double eps = 1e-8;

    std::vector<std::string> validate() const;
};

// Step decay: initial * 0.1^(number of milestones <= epoch), epochs 0-based.
struct LrSchedule {
    double initial = 1e-3;
    std::vector<std::size_t> milestones;

    double at(std::size_t epoch) const;
    std::vector<std::string> validate(std::size_t epochs) const;
};

// Per-parameter optimizer state, keyed by parameter name.
template <typename T>
struct OptimizerSlot {
    std::uint64_t step = 0;
    std::vector<Tensor<T>> buffers;  // sgd: momentum; adam: m, v
};

template <typename T>
using OptimizerState = std::map<std::string, OptimizerSlot<T>>;

// SGD with heavy-ball momentum (buf = mu * buf + g, first step buf = g) or
// Adam with bias correction. Parameters missing from the gradient map are
// left alone and their slots do not advance.
template <typename T>
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config);

    const OptimizerConfig& config() const noexcept { return config_; }

    void step(std::vector<Parameter<T>>& params, const GradientMap<T>& grads, double lr);

    const OptimizerState<T>& state() const noexcept { return state_; }
    void load_state(OptimizerState<T> state) { state_ = std::move(state); }

private:
    OptimizerConfig config_;
    OptimizerState<T> state_;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace auxq
