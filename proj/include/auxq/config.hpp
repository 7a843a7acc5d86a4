#pragma once

// Training configuration and the JSON document that describes an experiment.
// The schema is documented in docs/config-schema.md.

#include "auxq/auxiliary.hpp"
#include "auxq/data.hpp"
#include "auxq/optim.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace auxq {

enum class Method { Baseline, Auxi, AdditionalLoss, Kd };
enum class Precision { F32, F64 };

std::string_view to_string(Method m);
Method parse_method(std::string_view text);
std::string_view to_string(Precision p);
Precision parse_precision(std::string_view text);

struct KdConfig {
    double beta = 1.0;
    double temperature = 4.0;
};

struct AdditionalConfig {
    // Tap positions (0-based into the tap list) that get a head. Empty means
    // every tap except the last, which already feeds the main classifier.
    std::vector<std::size_t> taps;
    std::vector<double> alphas;  // empty means 0.3 per head
};

struct TrainConfig {
    Method method = Method::Baseline;
    QuantScheme target = QuantScheme::uniform(2);  // interior weights and activations
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    OptimizerConfig optimizer;
    std::vector<std::size_t> milestones;
    std::uint64_t seed = 1;
    Precision precision = Precision::F32;
    KdConfig kd;
    AdditionalConfig additional;
    std::size_t max_steps = 0;  // 0 = no cap; otherwise stop after this many steps in total
    std::size_t eval_batch_size = 256;

    LrSchedule schedule() const { return {optimizer.lr, milestones}; }
    std::vector<std::string> validate() const;

    static TrainConfig pretrain_defaults();
    static TrainConfig finetune_defaults();
};

// Either a preset name resolved against the dataset, or a full spec.
struct NetworkChoice {
    std::string preset = "plain4";
    std::optional<NetworkSpec> spec;
};

struct AuxiliaryChoice {
    std::size_t kernel = 1;
    std::size_t width = 64;
    std::optional<AuxiliarySpec> spec;  // explicit adaptors win over kernel/width
};

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetSpec dataset;
    NetworkChoice network;
    std::optional<AuxiliaryChoice> auxiliary;
    TrainConfig pretrain = TrainConfig::pretrain_defaults();
    TrainConfig finetune = TrainConfig::finetune_defaults();
    std::filesystem::path base_dir;  // where relative data paths resolve; not serialized

    // Backbone spec sized for the dataset (policy left Full).
    NetworkSpec backbone(const Dataset& sample) const;
    AuxiliarySpec auxiliary_spec(const NetworkSpec& backbone) const;
};

ExperimentConfig load_experiment(const std::filesystem::path& path);
void save_experiment(const ExperimentConfig& config, const std::filesystem::path& path);

// JSON conversions. Readers reject unknown keys and collect every problem
// into one ValidationError.
nlohmann::json to_json(const QuantScheme& s);
nlohmann::json to_json(const PrecisionPolicy& p);
nlohmann::json to_json(const NetworkSpec& s);
nlohmann::json to_json(const AuxiliarySpec& s);
nlohmann::json to_json(const OptimizerConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const DatasetSpec& d);
nlohmann::json to_json(const Normalization& n);
nlohmann::json to_json(const ExperimentConfig& c);

NetworkSpec network_spec_from_json(const nlohmann::json& j);
AuxiliarySpec auxiliary_spec_from_json(const nlohmann::json& j);
OptimizerConfig optimizer_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
Normalization normalization_from_json(const nlohmann::json& j);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

}  // namespace auxq
