#pragma once

#include "auxq/config.hpp"
#include "auxq/metrics.hpp"

#include <filesystem>
#include <functional>

namespace auxq {

struct ComparisonCell {
    Method method = Method::Baseline;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;  // set when !ok
    MetricsLog metrics;
    double final_test_top1 = 0;
    double final_test_loss = 0;
    double epoch1_test_top1 = 0;
};

struct MethodSummary {
    Method method = Method::Baseline;
    std::size_t runs = 0;  // successful cells
    double mean_top1 = 0;
    double min_top1 = 0;
    double max_top1 = 0;
};

struct ComparisonResult {
    std::vector<ComparisonCell> cells;  // method-major, seeds in order
    std::vector<MethodSummary> summary;

    const ComparisonCell* cell(Method m, std::uint64_t seed) const;
    const MethodSummary* summary_for(Method m) const;
};

struct ComparisonOptions {
    std::vector<Method> methods;
    std::vector<std::uint64_t> seeds;
    // Independent cells run on this many threads; each cell stays single-threaded inside.
    int threads = 1;
    std::function<void(const std::string&)> progress;
};

// For every seed: pretrain once in full precision, then fine-tune each method
// from that checkpoint with the same seed. A failing cell is recorded and the
// rest continue.
ComparisonResult run_comparison(const ExperimentConfig& config, const DataSplits& data, const ComparisonOptions& opts);

// One row per (method, seed).
std::string comparison_csv(const ComparisonResult& r);
std::string summary_csv(const ComparisonResult& r);
nlohmann::json comparison_json(const ComparisonResult& r);

// comparison.csv, summary.csv, comparison.json and cells/<method>_seed<k>.{csv,json}.
void write_comparison(const ComparisonResult& r, const std::filesystem::path& dir);

}  // namespace auxq
