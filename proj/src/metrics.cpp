#include "auxq/metrics.hpp"

#include "auxq/errors.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace auxq {

using nlohmann::json;

bool same_measurements(const MetricsRow& a, const MetricsRow& b)
{
    return a.epoch == b.epoch && a.split == b.split && a.loss == b.loss && a.top1 == b.top1 && a.top5 == b.top5 &&
           a.lr == b.lr;
}

bool same_measurements(const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!same_measurements(a[i], b[i])) return false;
    return true;
}

const MetricsRow* MetricsLog::last(std::string_view split) const
{
    for (auto it = rows.rbegin(); it != rows.rend(); ++it)
        if (it->split == split) return &*it;
    return nullptr;
}

const MetricsRow* MetricsLog::find(std::size_t epoch, std::string_view split) const
{
    for (const auto& r : rows)
        if (r.epoch == epoch && r.split == split) return &r;
    return nullptr;
}

namespace {

// Shortest text that reads back to the same double.
std::string num(double v)
{
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows)
{
    std::string out = std::string(kMetricsColumns) + "\n";
    for (const auto& r : rows) {
        out += std::to_string(r.epoch) + "," + r.split + "," + num(r.loss) + "," + num(r.top1) + "," +
               (r.top5 ? num(*r.top5) : std::string()) + "," + num(r.lr) + "," + num(r.seconds) + "\n";
    }
    return out;
}

json metrics_json(const MetricsLog& log)
{
    json rows = json::array();
    for (const auto& r : log.rows) {
        json row = {{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss}, {"top1", r.top1},
                    {"lr", r.lr},       {"seconds", r.seconds}};
        row["top5"] = r.top5 ? json(*r.top5) : json(nullptr);
        rows.push_back(std::move(row));
    }
    return {{"header", log.header}, {"columns", kMetricsColumns}, {"rows", rows}};
}

MetricsLog metrics_from_json(const json& j)
{
    MetricsLog log;
    try {
        log.header = j.value("header", json::object());
        for (const auto& row : j.at("rows")) {
            MetricsRow r;
            r.epoch = row.at("epoch").get<std::size_t>();
            r.split = row.at("split").get<std::string>();
            r.loss = row.at("loss").get<double>();
            r.top1 = row.at("top1").get<double>();
            if (row.contains("top5") && !row.at("top5").is_null()) r.top5 = row.at("top5").get<double>();
            r.lr = row.at("lr").get<double>();
            r.seconds = row.at("seconds").get<double>();
            log.rows.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("metrics: ") + e.what());
    }
    return log;
}

void write_metrics(const MetricsLog& log, const std::filesystem::path& csv, const std::filesystem::path& json_path)
{
    std::ofstream c(csv);
    if (!c) throw Error("cannot write '" + csv.string() + "'");
    c << metrics_csv(log.rows);
    std::ofstream j(json_path);
    if (!j) throw Error("cannot write '" + json_path.string() + "'");
    j << metrics_json(log).dump(2) << "\n";
}

MetricsLog read_metrics_json(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read metrics '" + path.string() + "'");
    try {
        return metrics_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw FormatError("metrics '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void export_curves(const std::filesystem::path& metrics_json_path, const std::filesystem::path& csv)
{
    const auto log = read_metrics_json(metrics_json_path);
    std::ofstream out(csv);
    if (!out) throw Error("cannot write '" + csv.string() + "'");
    out << metrics_csv(log.rows);
}

}  // namespace auxq
