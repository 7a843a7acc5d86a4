#pragma once

#include "auxq/auxiliary.hpp"
#include "auxq/checkpoint.hpp"
#include "auxq/config.hpp"
#include "auxq/data.hpp"
#include "auxq/errors.hpp"
#include "auxq/metrics.hpp"
#include "auxq/optim.hpp"

#include <memory>
#include <optional>
#include <random>

namespace auxq {

// Loss went non-finite. Carries the checkpoint from the start of the failing epoch.
class DivergenceError : public NumericFault {
public:
    DivergenceError(const std::string& what, Checkpoint last_good)
        : NumericFault(what), last_good_(std::make_shared<Checkpoint>(std::move(last_good)))
    {
    }
    const Checkpoint& last_good() const noexcept { return *last_good_; }

private:
    std::shared_ptr<Checkpoint> last_good_;
};

struct StepStats {
    double loss = 0;  // L on y_F
    double aux_loss = 0;  // L_aux, auxi only
    double total_loss = 0;  // what was differentiated
    std::size_t correct1 = 0;
    std::size_t correct5 = 0;
    std::size_t count = 0;
};

struct RunResult {
    Checkpoint checkpoint;
    MetricsLog metrics;
};

// Rank of the true label among the logits of one row (0 = argmax); ties count in its favour.
template <typename T>
std::size_t label_rank(std::span<const T> row, int label);

template <typename T>
MetricsRow evaluate(Network<T>& net, const Dataset& data, const Normalization& norm, std::size_t batch_size = 256);

template <typename T>
class Trainer {
public:
    // Stage 1: full-precision network from `spec` (policy forced to Full) with the given optimizer.
    static Trainer pretraining(const NetworkSpec& spec, const TrainConfig& config, const DataSplits& data);
    // More full-precision training starting from a checkpoint's parameters, fresh optimizer.
    static Trainer continued(const Checkpoint& from, const TrainConfig& config, const DataSplits& data);
    // Stage 2: policy standard(config.target). `aux` is required iff config.method is auxi.
    static Trainer finetuning(const Checkpoint& from, const TrainConfig& config, const DataSplits& data,
                              std::optional<AuxiliarySpec> aux);
    // Picks up exactly where checkpoint() left off.
    static Trainer resume(const Checkpoint& ckpt, const DataSplits& data);

    Trainer(Trainer&&) noexcept = default;

    // One iteration of the joint procedure on a prepared batch.
    StepStats step(const Batch<T>& batch, double lr, ForwardTrace<T>* trace = nullptr);
    // One pass over the shuffled train split; appends a train row and a test row.
    void run_epoch();
    // Remaining epochs (or until max_steps).
    RunResult run();

    MetricsRow evaluate(const Dataset& data);
    Checkpoint checkpoint() const;

    Network<T>& network() noexcept { return net_; }
    AuxiliaryModule<T>* auxiliary() noexcept { return aux_ ? &*aux_ : nullptr; }
    ClassifierHeads<T>* heads() noexcept { return heads_ ? &*heads_ : nullptr; }
    Network<T>* teacher() noexcept { return teacher_ ? &*teacher_ : nullptr; }
    Optimizer<T>& optimizer() noexcept { return opt_; }
    const TrainConfig& config() const noexcept { return cfg_; }
    const MetricsLog& metrics() const noexcept { return log_; }
    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t steps() const noexcept { return step_; }
    bool finished() const noexcept;
    std::string_view stage() const noexcept { return stage_; }

private:
    Trainer(std::string stage, Network<T> net, TrainConfig cfg, const DataSplits& data);
    void init_log();
    void resolve_additional();

    std::string stage_;
    Network<T> net_;
    std::optional<AuxiliaryModule<T>> aux_;
    std::optional<ClassifierHeads<T>> heads_;
    std::optional<Network<T>> teacher_;
    TrainConfig cfg_;
    Optimizer<T> opt_;
    const DataSplits* data_;
    std::mt19937_64 shuffle_;
    std::mt19937_64 shuffle_at_epoch_start_;
    std::mt19937_64 augment_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;  // batches done in the current epoch
    std::size_t epoch_ = 0;
    std::size_t step_ = 0;
    MetricsLog log_;
    std::optional<Checkpoint> last_good_;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

// Precision-dispatched entry points.
RunResult pretrain(const NetworkSpec& spec, const DataSplits& data, const TrainConfig& config);
RunResult finetune(const Checkpoint& from, const DataSplits& data, const TrainConfig& config,
                   std::optional<AuxiliarySpec> aux);
MetricsRow evaluate(const Checkpoint& ckpt, const Dataset& data, const Normalization& norm,
                    std::size_t batch_size = 256);

// Shuffle/augment streams are keyed by stage and method so cells of a comparison never share one.
std::string stream_key(std::string_view stage, Method method, std::string_view purpose);

}  // namespace auxq
