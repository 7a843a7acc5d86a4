#include "auxq/comparison.hpp"

#include "auxq/errors.hpp"
#include "auxq/kernels.hpp"
#include "auxq/trainer.hpp"

#include <omp.h>

#include <algorithm>
#include <fstream>

namespace auxq {

using nlohmann::json;

const ComparisonCell* ComparisonResult::cell(Method m, std::uint64_t seed) const
{
    for (const auto& c : cells)
        if (c.method == m && c.seed == seed) return &c;
    return nullptr;
}

const MethodSummary* ComparisonResult::summary_for(Method m) const
{
    for (const auto& s : summary)
        if (s.method == m) return &s;
    return nullptr;
}

namespace {

template <typename F>
void for_each_index(std::size_t n, int threads, F&& body)
{
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace

ComparisonResult run_comparison(const ExperimentConfig& config, const DataSplits& data, const ComparisonOptions& opts)
{
    if (opts.seeds.empty()) throw UsageError("compare: at least one seed is required");
    if (opts.methods.empty()) throw UsageError("compare: at least one method is required");

    const NetworkSpec backbone = config.backbone(data.train);
    const auto say = [&](const std::string& msg) {
        if (opts.progress) {
#pragma omp critical(auxq_progress)
            opts.progress(msg);
        }
    };

    // Cells run concurrently; kernels inside each cell run on one thread.
    const int saved_threads = kernels::num_threads();
    if (opts.threads > 1) kernels::set_num_threads(1);

    std::vector<std::optional<Checkpoint>> pretrained(opts.seeds.size());
    std::vector<std::string> pretrain_error(opts.seeds.size());
    for_each_index(opts.seeds.size(), opts.threads, [&](std::size_t i) {
        TrainConfig pc = config.pretrain;
        pc.seed = opts.seeds[i];
        try {
            pretrained[i] = pretrain(backbone, data, pc).checkpoint;
            say("pretrained seed " + std::to_string(opts.seeds[i]));
        } catch (const std::exception& e) {
            pretrain_error[i] = std::string("pretrain failed: ") + e.what();
        }
    });

    ComparisonResult result;
    for (auto m : opts.methods)
        for (auto s : opts.seeds) result.cells.push_back({m, s, false, {}, {}, 0, 0, 0});

    for_each_index(result.cells.size(), opts.threads, [&](std::size_t i) {
        auto& cell = result.cells[i];
        const std::size_t si = i % opts.seeds.size();
        if (!pretrained[si]) {
            cell.error = pretrain_error[si];
            return;
        }
        TrainConfig fc = config.finetune;
        fc.method = cell.method;
        fc.seed = cell.seed;
        try {
            std::optional<AuxiliarySpec> aux;
            if (cell.method == Method::Auxi) aux = config.auxiliary_spec(backbone);
            auto run = finetune(*pretrained[si], data, fc, aux);
            cell.metrics = std::move(run.metrics);
            const auto* last = cell.metrics.last("test");
            const auto* first = cell.metrics.find(1, "test");
            if (last) {
                cell.final_test_top1 = last->top1;
                cell.final_test_loss = last->loss;
            }
            if (first) cell.epoch1_test_top1 = first->top1;
            cell.ok = true;
            say(std::string(to_string(cell.method)) + " seed " + std::to_string(cell.seed) + " final top1 " +
                std::to_string(cell.final_test_top1));
        } catch (const std::exception& e) {
            cell.error = e.what();
            say(std::string(to_string(cell.method)) + " seed " + std::to_string(cell.seed) + " failed: " + e.what());
        }
    });

    if (opts.threads > 1) kernels::set_num_threads(saved_threads);

    for (auto m : opts.methods) {
        MethodSummary s;
        s.method = m;
        for (const auto& c : result.cells) {
            if (c.method != m || !c.ok) continue;
            if (s.runs == 0) {
                s.min_top1 = s.max_top1 = c.final_test_top1;
            } else {
                s.min_top1 = std::min(s.min_top1, c.final_test_top1);
                s.max_top1 = std::max(s.max_top1, c.final_test_top1);
            }
            s.mean_top1 += c.final_test_top1;
            ++s.runs;
        }
        if (s.runs > 0) s.mean_top1 /= static_cast<double>(s.runs);
        result.summary.push_back(s);
    }
    return result;
}

std::string comparison_csv(const ComparisonResult& r)
{
    std::string out = "method,seed,status,final_test_top1,final_test_loss,epoch1_test_top1,error\n";
    for (const auto& c : r.cells) {
        std::string err = c.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out += std::string(to_string(c.method)) + "," + std::to_string(c.seed) + "," + (c.ok ? "ok" : "failed") + "," +
               std::to_string(c.final_test_top1) + "," + std::to_string(c.final_test_loss) + "," +
               std::to_string(c.epoch1_test_top1) + "," + err + "\n";
    }
    return out;
}

std::string summary_csv(const ComparisonResult& r)
{
    std::string out = "method,runs,mean_test_top1,min_test_top1,max_test_top1\n";
    for (const auto& s : r.summary)
        out += std::string(to_string(s.method)) + "," + std::to_string(s.runs) + "," + std::to_string(s.mean_top1) +
               "," + std::to_string(s.min_top1) + "," + std::to_string(s.max_top1) + "\n";
    return out;
}

json comparison_json(const ComparisonResult& r)
{
    json cells = json::array();
    for (const auto& c : r.cells)
        cells.push_back({{"method", std::string(to_string(c.method))},
                         {"seed", c.seed},
                         {"status", c.ok ? "ok" : "failed"},
                         {"error", c.error},
                         {"final_test_top1", c.final_test_top1},
                         {"final_test_loss", c.final_test_loss},
                         {"epoch1_test_top1", c.epoch1_test_top1},
                         {"metrics", metrics_json(c.metrics)}});
    json summary = json::array();
    for (const auto& s : r.summary)
        summary.push_back({{"method", std::string(to_string(s.method))},
                           {"runs", s.runs},
                           {"mean_test_top1", s.mean_top1},
                           {"min_test_top1", s.min_top1},
                           {"max_test_top1", s.max_top1}});
    return {{"cells", cells}, {"summary", summary}};
}

void write_comparison(const ComparisonResult& r, const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir / "cells");
    auto write = [](const fs::path& p, const std::string& text) {
        std::ofstream out(p);
        if (!out) throw Error("cannot write '" + p.string() + "'");
        out << text;
    };
    write(dir / "comparison.csv", comparison_csv(r));
    write(dir / "summary.csv", summary_csv(r));
    write(dir / "comparison.json", comparison_json(r).dump(2) + "\n");
    for (const auto& c : r.cells) {
        if (!c.ok) continue;
        const std::string stem = std::string(to_string(c.method)) + "_seed" + std::to_string(c.seed);
        write_metrics(c.metrics, dir / "cells" / (stem + ".csv"), dir / "cells" / (stem + ".json"));
    }
}

}  // namespace auxq
