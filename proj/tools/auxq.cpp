// auxq: command-line front end for pretraining, fine-tuning, evaluation and
// method comparisons. Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include "auxq/comparison.hpp"
#include "auxq/kernels.hpp"
#include "auxq/log.hpp"
#include "auxq/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace auxq;

namespace {

struct Common {
    std::string out;
    int threads = 0;
    bool verbose = false;
};

fs::path output_dir(const Common& c, const ExperimentConfig* cfg)
{
    fs::path dir;
    if (!c.out.empty())
        dir = c.out;
    else if (const char* env = std::getenv("AUXQ_OUTPUT_DIR"); env && *env)
        dir = env;
    else
        dir = fs::path("runs") / (cfg ? cfg->name : "auxq");
    fs::create_directories(dir);
    return dir;
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

int fail(const char* kind, const std::string& message, int code)
{
    std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
    return code;
}

void print_row(const MetricsRow& r)
{
    json j = {{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss}, {"top1", r.top1}, {"lr", r.lr},
              {"seconds", r.seconds}};
    j["top5"] = r.top5 ? json(*r.top5) : json(nullptr);
    std::cout << j.dump() << "\n";
}

std::string pad(std::string s, std::size_t w)
{
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

int cmd_pretrain(const Common& common, const std::string& config_path, std::optional<std::uint64_t> seed)
{
    auto cfg = load_experiment(config_path);
    if (seed) cfg.pretrain.seed = *seed;
    const auto data = load_dataset(cfg.dataset, cfg.base_dir);
    const auto dir = output_dir(common, &cfg);
    auto run = pretrain(cfg.backbone(data.train), data, cfg.pretrain);
    run.checkpoint.extra["experiment"] = to_json(cfg);
    save_checkpoint(run.checkpoint, dir / "pretrain.ckpt");
    run.metrics.header["dataset"] = to_json(cfg.dataset);
    write_metrics(run.metrics, dir / "pretrain_metrics.csv", dir / "pretrain_metrics.json");
    save_experiment(cfg, dir / "experiment.json");
    if (const auto* last = run.metrics.last("test")) print_row(*last);
    std::cout << "checkpoint " << (dir / "pretrain.ckpt").string() << "\n";
    return 0;
}

int cmd_finetune(const Common& common, const std::string& config_path, std::string from,
                 const std::string& method_text, bool aux_given, const std::string& aux_path,
                 std::optional<std::uint64_t> seed)
{
    auto cfg = load_experiment(config_path);
    if (!method_text.empty()) cfg.finetune.method = parse_method(method_text);
    if (seed) cfg.finetune.seed = *seed;
    if (cfg.finetune.method == Method::Auxi && !aux_given)
        throw ValidationError({"method auxi needs --aux (auxiliary module spec file, or none for the config's)"});
    if (cfg.finetune.method != Method::Auxi && aux_given)
        throw ValidationError({"--aux applies only to method auxi, not " +
                               std::string(to_string(cfg.finetune.method))});

    const auto dir = output_dir(common, &cfg);
    if (from.empty()) from = (dir / "pretrain.ckpt").string();
    const auto pre = load_checkpoint(from);
    const auto data = load_dataset(cfg.dataset, cfg.base_dir);

    std::optional<AuxiliarySpec> aux;
    if (aux_given) {
        if (aux_path.empty()) {
            aux = cfg.auxiliary_spec(pre.network);
        } else {
            std::ifstream in(aux_path);
            if (!in) throw UsageError("cannot read auxiliary spec '" + aux_path + "'");
            aux = auxiliary_spec_from_json(json::parse(in));
        }
    }
    auto run = finetune(pre, data, cfg.finetune, aux);
    run.checkpoint.extra["experiment"] = to_json(cfg);
    const std::string stem = "finetune_" + std::string(to_string(cfg.finetune.method));
    save_checkpoint(run.checkpoint, dir / (stem + ".ckpt"));
    run.metrics.header["dataset"] = to_json(cfg.dataset);
    write_metrics(run.metrics, dir / (stem + "_metrics.csv"), dir / (stem + "_metrics.json"));
    save_experiment(cfg, dir / "experiment.json");
    if (const auto* last = run.metrics.last("test")) print_row(*last);
    std::cout << "checkpoint " << (dir / (stem + ".ckpt")).string() << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path)
{
    const auto ckpt = load_checkpoint(ckpt_path);
    auto cfg = load_experiment(config_path);
    const auto data = load_dataset(cfg.dataset, cfg.base_dir);
    Normalization norm = data.norm;
    if (ckpt.extra.contains("normalization")) norm = normalization_from_json(ckpt.extra.at("normalization"));
    print_row(evaluate(ckpt, data.test, norm));
    return 0;
}

int cmd_compare(const Common& common, const std::string& config_path, const std::string& methods_text,
                std::size_t seeds, std::uint64_t first_seed, int jobs)
{
    auto cfg = load_experiment(config_path);
    ComparisonOptions opts;
    for (const auto& m : split_list(methods_text)) opts.methods.push_back(parse_method(m));
    if (opts.methods.empty()) throw UsageError("--methods lists no method");
    if (seeds == 0) throw UsageError("--seeds must be at least 1");
    for (std::size_t i = 0; i < seeds; ++i) opts.seeds.push_back(first_seed + i);
    opts.threads = jobs;
    opts.progress = [](const std::string& m) { log::info(m); };
    const auto data = load_dataset(cfg.dataset, cfg.base_dir);
    const auto dir = output_dir(common, &cfg) / "compare";
    const auto result = run_comparison(cfg, data, opts);
    write_comparison(result, dir);
    save_experiment(cfg, dir / "experiment.json");
    std::cout << summary_csv(result);
    std::cout << "results " << dir.string() << "\n";
    for (const auto& c : result.cells)
        if (!c.ok) return 1;
    return 0;
}

int cmd_inspect(const std::string& ckpt_path, bool as_json)
{
    const auto ckpt = load_checkpoint(ckpt_path);
    std::size_t f_params = 0, h_params = 0, head_params = 0, teacher_params = 0;
    for (const auto& t : ckpt.tensors) {
        if (t.role != "parameter") continue;
        if (t.name.starts_with("aux."))
            h_params += t.values.size();
        else if (t.name.starts_with("heads."))
            head_params += t.values.size();
        else if (t.name.starts_with("teacher/"))
            teacher_params += t.values.size();
        else
            f_params += t.values.size();
    }
    // Audit rows come from the network definition itself.
    Network<double> net(ckpt.network, 0);
    const auto rows = net.audit();
    std::vector<LayerAudit> aux_rows;
    if (ckpt.auxiliary) aux_rows = AuxiliaryModule<double>(*ckpt.auxiliary, net.tap_signature(), 0).audit();

    if (as_json) {
        json layers = json::array();
        for (const auto& r : rows)
            layers.push_back({{"layer", r.name},
                              {"role", std::string(to_string(r.role))},
                              {"weight_scheme", r.weight_scheme.str()},
                              {"input_scheme", r.input_scheme.str()}});
        json aux = json::array();
        for (const auto& r : aux_rows) aux.push_back({{"layer", r.name}, {"weight_scheme", r.weight_scheme.str()}});
        std::cout << json{{"network", ckpt.network.name},
                          {"dtype", std::string(to_string(ckpt.dtype))},
                          {"epoch", ckpt.epoch},
                          {"step", ckpt.step},
                          {"policy", to_json(ckpt.network.policy)},
                          {"layers", layers},
                          {"auxiliary_layers", aux},
                          {"parameters", {{"backbone", f_params}, {"auxiliary", h_params}, {"heads", head_params},
                                          {"teacher", teacher_params}}}}
                         .dump(2)
                  << "\n";
        return 0;
    }

    const auto& p = ckpt.network.policy;
    std::cout << "network " << ckpt.network.name << "  dtype " << to_string(ckpt.dtype) << "  epoch " << ckpt.epoch
              << "  step " << ckpt.step << "\n";
    std::cout << "policy first " << p.first_layer.str() << "  last " << p.last_layer.str() << "  interior "
              << p.interior.str() << "  activation " << p.activation.str() << "\n";
    std::cout << pad("layer", 20) << pad("role", 10) << pad("weights", 14) << "input\n";
    for (const auto& r : rows)
        std::cout << pad(r.name, 20) << pad(std::string(to_string(r.role)), 10) << pad(r.weight_scheme.str(), 14)
                  << r.input_scheme.str() << "\n";
    for (const auto& r : aux_rows)
        std::cout << pad(r.name, 20) << pad("aux", 10) << pad(r.weight_scheme.str(), 14) << r.input_scheme.str()
                  << "\n";
    std::cout << "parameters backbone " << f_params;
    if (h_params) std::cout << "  auxiliary " << h_params;
    if (head_params) std::cout << "  heads " << head_params;
    if (teacher_params) std::cout << "  teacher " << teacher_params;
    std::cout << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"auxq: quantization-aware training with a full-precision auxiliary module"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--threads", common.threads, "Kernel threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
    app.add_flag("-v,--verbose", common.verbose, "Progress on stderr");

    std::string config, from, method, aux_path, ckpt, metrics, curves_out, methods = "baseline,auxi";
    std::optional<std::uint64_t> seed;
    std::size_t seeds = 1;
    std::uint64_t first_seed = 1;
    int jobs = 1;
    bool as_json = false;

    auto* pre = app.add_subcommand("pretrain", "Full-precision pretraining");
    pre->add_option("-c,--config", config, "Experiment config (JSON)")->required();
    pre->add_option("--seed", seed, "Override the pretrain seed");
    pre->add_option("-o,--out", common.out, "Output directory (default $AUXQ_OUTPUT_DIR or runs/<name>)");

    auto* fin = app.add_subcommand("finetune", "Quantized fine-tuning from a pretrain checkpoint");
    fin->add_option("-c,--config", config, "Experiment config (JSON)")->required();
    fin->add_option("--from", from, "Pretrain checkpoint (default <out>/pretrain.ckpt)");
    fin->add_option("-m,--method", method, "baseline | auxi | additional_loss | kd");
    auto* aux_opt = fin->add_option("--aux", aux_path, "Attach the auxiliary module; optional spec file")->expected(0, 1);
    fin->add_option("--seed", seed, "Override the fine-tune seed");
    fin->add_option("-o,--out", common.out, "Output directory");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    ev->add_option("-c,--config", config, "Experiment config naming the dataset")->required();

    auto* cmp = app.add_subcommand("compare", "Method x seed comparison grid");
    cmp->add_option("-c,--config", config, "Experiment config (JSON)")->required();
    cmp->add_option("--methods", methods, "Comma-separated methods")->capture_default_str();
    cmp->add_option("--seeds", seeds, "Number of seeds")->capture_default_str();
    cmp->add_option("--first-seed", first_seed, "First seed")->capture_default_str();
    cmp->add_option("-j,--jobs", jobs, "Cells run in parallel")->check(CLI::PositiveNumber);
    cmp->add_option("-o,--out", common.out, "Output directory");

    auto* exp = app.add_subcommand("export-curves", "Metrics JSON to the fixed-column CSV");
    exp->add_option("--metrics", metrics, "Metrics JSON")->required();
    exp->add_option("-o,--out", curves_out, "CSV to write")->required();

    auto* ins = app.add_subcommand("inspect", "Precision audit and parameter counts of a checkpoint");
    ins->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    ins->add_flag("--json", as_json, "Machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    if (common.verbose) log::set_level(log::Level::Info);
    if (common.threads > 0) kernels::set_num_threads(common.threads);

    try {
        if (*pre) return cmd_pretrain(common, config, seed);
        if (*fin) return cmd_finetune(common, config, from, method, aux_opt->count() > 0, aux_path, seed);
        if (*ev) return cmd_eval(ckpt, config);
        if (*cmp) return cmd_compare(common, config, methods, seeds, first_seed, jobs);
        if (*exp) {
            export_curves(metrics, curves_out);
            return 0;
        }
        if (*ins) return cmd_inspect(ckpt, as_json);
    } catch (const ValidationError& e) {
        return fail("validation", e.what(), 2);
    } catch (const UsageError& e) {
        return fail("usage", e.what(), 2);
    } catch (const DivergenceError& e) {
        return fail("divergence", e.what(), 1);
    } catch (const json::exception& e) {
        return fail("usage", std::string("malformed JSON: ") + e.what(), 2);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
    return 0;
}
