#pragma once

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace auxq {

struct MetricsRow {
    std::size_t epoch = 0;  // 1-based; 0 is a standalone evaluation
    std::string split;      // "train" or "test"
    double loss = 0;
    double top1 = 0;
    std::optional<double> top5;  // present when the task has at least 5 classes
    double lr = 0;
    double seconds = 0;
};

// Everything but wall time; wall time is never reproducible.
bool same_measurements(const MetricsRow& a, const MetricsRow& b);
bool same_measurements(const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b);

struct MetricsLog {
    nlohmann::json header = nlohmann::json::object();  // config, eval_augmentation, ...
    std::vector<MetricsRow> rows;

    const MetricsRow* last(std::string_view split) const;
    const MetricsRow* find(std::size_t epoch, std::string_view split) const;
};

// Fixed column order: epoch,split,loss,top1,top5,lr,seconds. An absent top5 is an empty field.
inline constexpr const char* kMetricsColumns = "epoch,split,loss,top1,top5,lr,seconds";

std::string metrics_csv(const std::vector<MetricsRow>& rows);
nlohmann::json metrics_json(const MetricsLog& log);
MetricsLog metrics_from_json(const nlohmann::json& j);

void write_metrics(const MetricsLog& log, const std::filesystem::path& csv, const std::filesystem::path& json);
MetricsLog read_metrics_json(const std::filesystem::path& path);
// Metrics JSON -> the fixed CSV.
void export_curves(const std::filesystem::path& metrics_json, const std::filesystem::path& csv);

}  // namespace auxq
