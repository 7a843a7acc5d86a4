#include "auxq/optim.hpp"

#include "auxq/errors.hpp"

#include <cmath>

namespace auxq {

std::string_view to_string(OptimizerKind kind)
{
    return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view text)
{
    if (text == "sgd") return OptimizerKind::Sgd;
    if (text == "adam") return OptimizerKind::Adam;
    throw UsageError("unknown optimizer '" + std::string(text) + "' (expected sgd or adam)");
}

std::vector<std::string> OptimizerConfig::validate() const
{
    std::vector<std::string> errs;
    if (!(lr >= 0.0)) errs.push_back("optimizer.lr must be non-negative");
    if (!(weight_decay >= 0.0)) errs.push_back("optimizer.weight_decay must be non-negative");
    if (kind == OptimizerKind::Sgd && !(momentum >= 0.0 && momentum < 1.0))
        errs.push_back("optimizer.momentum must lie in [0, 1)");
    if (kind == OptimizerKind::Adam) {
        if (!(beta1 >= 0.0 && beta1 < 1.0)) errs.push_back("optimizer.beta1 must lie in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) errs.push_back("optimizer.beta2 must lie in [0, 1)");
        if (!(eps > 0.0)) errs.push_back("optimizer.eps must be positive");
    }
    return errs;
}

double LrSchedule::at(std::size_t epoch) const
{
    double lr = initial;
    for (auto m : milestones)
        if (m <= epoch) lr *= 0.1;
    return lr;
}

std::vector<std::string> LrSchedule::validate(std::size_t epochs) const
{
    std::vector<std::string> errs;
    if (!(initial >= 0.0)) errs.push_back("lr must be non-negative");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (i > 0 && milestones[i] <= milestones[i - 1]) errs.push_back("milestones must be strictly increasing");
        if (milestones[i] >= epochs)
            errs.push_back("milestone " + std::to_string(milestones[i]) + " is not below epochs (" +
                           std::to_string(epochs) + ")");
    }
    return errs;
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig config) : config_(config)
{
    if (auto errs = config_.validate(); !errs.empty()) throw ValidationError(std::move(errs));
}

template <typename T>
void Optimizer<T>::step(std::vector<Parameter<T>>& params, const GradientMap<T>& grads, double lr)
{
    const T rate = static_cast<T>(lr);
    const T wd = static_cast<T>(config_.weight_decay);
    for (auto& p : params) {
        auto it = grads.find(p.name);
        if (it == grads.end()) continue;
        const auto& g = it->second;
        if (g.shape() != p.value.shape())
            throw ShapeError("optimizer: gradient " + to_string(g.shape()) + " for parameter '" + p.name + "' of " +
                             to_string(p.value.shape()));
        auto& slot = state_[p.name];
        ++slot.step;
        auto w = p.value.data();

        if (config_.kind == OptimizerKind::Sgd) {
            const T mu = static_cast<T>(config_.momentum);
            if (slot.buffers.empty()) slot.buffers.emplace_back(g.shape());
            auto buf = slot.buffers[0].data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                const T d = g[i] + wd * w[i];
                buf[i] = slot.step == 1 ? d : mu * buf[i] + d;
                w[i] -= rate * buf[i];
            }
            continue;
        }

        const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
        const T eps = static_cast<T>(config_.eps);
        if (slot.buffers.empty()) {
            slot.buffers.emplace_back(g.shape());
            slot.buffers.emplace_back(g.shape());
        }
        auto m = slot.buffers[0].data();
        auto v = slot.buffers[1].data();
        const double t = static_cast<double>(slot.step);
        const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, t));
        const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, t));
        for (std::size_t i = 0; i < w.size(); ++i) {
            const T d = g[i] + wd * w[i];
            m[i] = b1 * m[i] + (T{1} - b1) * d;
            v[i] = b2 * v[i] + (T{1} - b2) * d * d;
            w[i] -= rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace auxq
