#include "auxq/config.hpp"

#include "auxq/errors.hpp"

#include <fstream>
#include <set>

namespace auxq {

using nlohmann::json;

std::string_view to_string(Method m)
{
    switch (m) {
    case Method::Baseline: return "baseline";
    case Method::Auxi: return "auxi";
    case Method::AdditionalLoss: return "additional_loss";
    case Method::Kd: return "kd";
    }
    return "?";
}

Method parse_method(std::string_view text)
{
    if (text == "baseline") return Method::Baseline;
    if (text == "auxi") return Method::Auxi;
    if (text == "additional_loss") return Method::AdditionalLoss;
    if (text == "kd") return Method::Kd;
    throw UsageError("unknown method '" + std::string(text) + "' (expected baseline, auxi, additional_loss or kd)");
}

std::string_view to_string(Precision p)
{
    return p == Precision::F32 ? "f32" : "f64";
}

Precision parse_precision(std::string_view text)
{
    if (text == "f32") return Precision::F32;
    if (text == "f64") return Precision::F64;
    throw UsageError("unknown precision '" + std::string(text) + "' (expected f32 or f64)");
}

std::vector<std::string> TrainConfig::validate() const
{
    std::vector<std::string> errs = optimizer.validate();
    if (batch_size == 0) errs.push_back("batch_size must be positive");
    if (eval_batch_size == 0) errs.push_back("eval_batch_size must be positive");
    for (auto& e : schedule().validate(epochs)) errs.push_back(std::move(e));
    if (!(kd.beta >= 0.0)) errs.push_back("kd.beta must be non-negative");
    if (!(kd.temperature > 0.0)) errs.push_back("kd.temperature must be positive");
    for (double a : additional.alphas)
        if (!(a >= 0.0)) errs.push_back("additional.alphas must be non-negative");
    if (!additional.taps.empty() && !additional.alphas.empty() && additional.taps.size() != additional.alphas.size())
        errs.push_back("additional.alphas must have one weight per tap");
    return errs;
}

TrainConfig TrainConfig::pretrain_defaults()
{
    TrainConfig c;
    c.target = QuantScheme::full();
    c.epochs = 3;
    c.optimizer.kind = OptimizerKind::Sgd;
    c.optimizer.lr = 0.1;
    c.optimizer.momentum = 0.9;
    return c;
}

TrainConfig TrainConfig::finetune_defaults()
{
    TrainConfig c;
    c.target = QuantScheme::uniform(2);
    c.epochs = 10;
    c.optimizer.kind = OptimizerKind::Adam;
    c.optimizer.lr = 1e-3;
    return c;
}

NetworkSpec ExperimentConfig::backbone(const Dataset& sample) const
{
    NetworkSpec s = network.spec ? *network.spec
                                 : NetworkSpec::preset(network.preset, sample.channels, sample.height, sample.width,
                                                       sample.num_classes);
    s.policy = PrecisionPolicy::full();
    return s;
}

AuxiliarySpec ExperimentConfig::auxiliary_spec(const NetworkSpec& backbone) const
{
    if (auxiliary && auxiliary->spec) return *auxiliary->spec;
    const AuxiliaryChoice choice = auxiliary.value_or(AuxiliaryChoice{});
    return AuxiliarySpec::for_backbone(backbone, choice.kernel, choice.width);
}

namespace {

// Walks one JSON object, collecting type errors and unknown keys.
class Reader {
public:
    Reader(const json& j, std::string where, std::vector<std::string>& errs) : j_(j), where_(std::move(where)), errs_(errs)
    {
        if (!j_.is_object()) errs_.push_back(where_ + ": expected an object");
    }

    bool has(const char* key) const { return j_.is_object() && j_.contains(key); }

    template <typename V>
    void get(const char* key, V& out)
    {
        seen_.insert(key);
        if (!has(key)) return;
        try {
            out = j_.at(key).get<V>();
        } catch (const json::exception&) {
            errs_.push_back(where_ + "." + key + ": wrong type (" + std::string(j_.at(key).type_name()) + ")");
        }
    }

    // Parses a string field with `parse`, recording its failure.
    template <typename V, typename F>
    void parse(const char* key, V& out, F&& fn)
    {
        std::string text;
        if (!has(key)) {
            seen_.insert(key);
            return;
        }
        get(key, text);
        try {
            out = fn(text);
        } catch (const Error& e) {
            errs_.push_back(where_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key)
    {
        seen_.insert(key);
        return has(key) ? &j_.at(key) : nullptr;
    }

    void require(const char* key)
    {
        if (!has(key)) errs_.push_back(where_ + "." + key + ": required");
    }

    void finish()
    {
        if (!j_.is_object()) return;
        for (const auto& [k, v] : j_.items())
            if (!seen_.contains(k)) errs_.push_back(where_ + ": unknown key '" + k + "'");
    }

    const std::string& where() const { return where_; }
    std::vector<std::string>& errors() { return errs_; }

private:
    const json& j_;
    std::string where_;
    std::vector<std::string>& errs_;
    std::set<std::string> seen_;
};

void throw_if(std::vector<std::string>& errs)
{
    if (!errs.empty()) throw ValidationError(std::move(errs));
}

QuantScheme read_scheme(Reader& r, const char* key, QuantScheme fallback)
{
    QuantScheme s = fallback;
    r.parse(key, s, [](const std::string& t) { return QuantScheme::parse(t); });
    return s;
}

PrecisionPolicy read_policy(const json& j, const std::string& where, std::vector<std::string>& errs)
{
    Reader r(j, where, errs);
    PrecisionPolicy p;
    p.first_layer = read_scheme(r, "first_layer", p.first_layer);
    p.last_layer = read_scheme(r, "last_layer", p.last_layer);
    p.interior = read_scheme(r, "interior", p.interior);
    p.activation = read_scheme(r, "activation", p.activation);
    r.finish();
    return p;
}

NetworkSpec read_network(const json& j, const std::string& where, std::vector<std::string>& errs)
{
    Reader r(j, where, errs);
    NetworkSpec s;
    r.get("name", s.name);
    r.get("in_channels", s.in_channels);
    r.get("in_height", s.in_height);
    r.get("in_width", s.in_width);
    r.get("num_classes", s.num_classes);
    r.require("blocks");
    if (const json* stem = r.child("stem")) {
        Reader sr(*stem, where + ".stem", errs);
        sr.get("out_channels", s.stem.out_channels);
        sr.get("kernel", s.stem.kernel);
        sr.get("stride", s.stem.stride);
        sr.finish();
    }
    if (const json* blocks = r.child("blocks")) {
        if (!blocks->is_array()) errs.push_back(where + ".blocks: expected an array");
        for (std::size_t i = 0; blocks->is_array() && i < blocks->size(); ++i) {
            Reader br((*blocks)[i], where + ".blocks[" + std::to_string(i) + "]", errs);
            BlockSpec b;
            br.get("in_channels", b.in_channels);
            br.get("out_channels", b.out_channels);
            br.get("stride", b.stride);
            br.parse("kind", b.kind, [](const std::string& t) {
                if (t == "residual") return BlockKind::Residual;
                if (t == "plain") return BlockKind::Plain;
                throw UsageError("expected residual or plain, got '" + t + "'");
            });
            br.finish();
            s.blocks.push_back(b);
        }
    }
    if (const json* pol = r.child("policy")) s.policy = read_policy(*pol, where + ".policy", errs);
    if (r.has("tap_indices")) {
        r.get("tap_indices", s.tap_indices);
    } else {
        r.child("tap_indices");
        for (std::size_t i = 0; i < s.blocks.size(); ++i) s.tap_indices.push_back(i);
    }
    r.finish();
    return s;
}

AuxiliarySpec read_auxiliary(const json& j, const std::string& where, std::vector<std::string>& errs)
{
    Reader r(j, where, errs);
    AuxiliarySpec s;
    r.get("width", s.width);
    r.get("num_classes", s.num_classes);
    r.require("adaptors");
    if (const json* ads = r.child("adaptors")) {
        if (!ads->is_array()) errs.push_back(where + ".adaptors: expected an array");
        for (std::size_t i = 0; ads->is_array() && i < ads->size(); ++i) {
            Reader ar((*ads)[i], where + ".adaptors[" + std::to_string(i) + "]", errs);
            AdaptorSpec a;
            a.out_channels = s.width;
            ar.get("kernel", a.kernel);
            ar.get("out_channels", a.out_channels);
            ar.finish();
            s.adaptors.push_back(a);
        }
    }
    r.finish();
    return s;
}

OptimizerConfig read_optimizer(const json& j, const std::string& where, std::vector<std::string>& errs,
                               OptimizerConfig c)
{
    Reader r(j, where, errs);
    r.parse("kind", c.kind, [](const std::string& t) { return parse_optimizer(t); });
    r.get("lr", c.lr);
    r.get("momentum", c.momentum);
    r.get("weight_decay", c.weight_decay);
    r.get("beta1", c.beta1);
    r.get("beta2", c.beta2);
    r.get("eps", c.eps);
    r.finish();
    return c;
}

TrainConfig read_train(const json& j, const std::string& where, std::vector<std::string>& errs, TrainConfig c)
{
    Reader r(j, where, errs);
    r.parse("method", c.method, [](const std::string& t) { return parse_method(t); });
    c.target = read_scheme(r, "target", c.target);
    r.get("epochs", c.epochs);
    r.get("batch_size", c.batch_size);
    if (const json* o = r.child("optimizer")) c.optimizer = read_optimizer(*o, where + ".optimizer", errs, c.optimizer);
    r.get("milestones", c.milestones);
    r.get("seed", c.seed);
    r.parse("precision", c.precision, [](const std::string& t) { return parse_precision(t); });
    if (const json* kd = r.child("kd")) {
        Reader kr(*kd, where + ".kd", errs);
        kr.get("beta", c.kd.beta);
        kr.get("temperature", c.kd.temperature);
        kr.finish();
    }
    if (const json* add = r.child("additional")) {
        Reader ar(*add, where + ".additional", errs);
        ar.get("taps", c.additional.taps);
        ar.get("alphas", c.additional.alphas);
        ar.finish();
    }
    r.get("max_steps", c.max_steps);
    r.get("eval_batch_size", c.eval_batch_size);
    r.finish();
    if (errs.empty())
        for (auto& e : c.validate()) errs.push_back(where + ": " + e);
    return c;
}

DatasetSpec read_dataset(const json& j, const std::string& where, std::vector<std::string>& errs)
{
    Reader r(j, where, errs);
    DatasetSpec d;
    r.require("source");
    r.parse("source", d.source, [](const std::string& t) { return parse_source_kind(t); });
    r.get("label", d.label);
    r.get("train_images", d.train_images);
    r.get("train_labels", d.train_labels);
    r.get("test_images", d.test_images);
    r.get("test_labels", d.test_labels);
    r.get("num_classes", d.num_classes);
    r.get("train_files", d.train_files);
    r.get("test_files", d.test_files);
    r.parse("kind", d.synth_kind, [](const std::string& t) { return parse_synth_kind(t); });
    r.get("train_size", d.synth_train);
    r.get("test_size", d.synth_test);
    r.get("seed", d.synth_seed);
    r.get("train_limit", d.train_limit);
    r.get("test_limit", d.test_limit);
    r.get("normalize", d.normalize);
    r.parse("augment", d.augment, [](const std::string& t) { return parse_augment(t); });
    r.get("crop_padding", d.crop_padding);
    r.finish();
    if (errs.empty())
        for (auto& e : d.validate()) errs.push_back(where + ": " + e);
    return d;
}

}  // namespace

json to_json(const QuantScheme& s)
{
    return s.str();
}

json to_json(const PrecisionPolicy& p)
{
    return {{"first_layer", p.first_layer.str()},
            {"last_layer", p.last_layer.str()},
            {"interior", p.interior.str()},
            {"activation", p.activation.str()}};
}

json to_json(const NetworkSpec& s)
{
    json blocks = json::array();
    for (const auto& b : s.blocks)
        blocks.push_back({{"in_channels", b.in_channels},
                          {"out_channels", b.out_channels},
                          {"stride", b.stride},
                          {"kind", std::string(to_string(b.kind))}});
    return {{"name", s.name},
            {"in_channels", s.in_channels},
            {"in_height", s.in_height},
            {"in_width", s.in_width},
            {"stem", {{"out_channels", s.stem.out_channels}, {"kernel", s.stem.kernel}, {"stride", s.stem.stride}}},
            {"blocks", blocks},
            {"num_classes", s.num_classes},
            {"policy", to_json(s.policy)},
            {"tap_indices", s.tap_indices}};
}

json to_json(const AuxiliarySpec& s)
{
    json ads = json::array();
    for (const auto& a : s.adaptors) ads.push_back({{"kernel", a.kernel}, {"out_channels", a.out_channels}});
    return {{"adaptors", ads}, {"width", s.width}, {"num_classes", s.num_classes}};
}

json to_json(const OptimizerConfig& c)
{
    json j = {{"kind", std::string(to_string(c.kind))}, {"lr", c.lr}, {"weight_decay", c.weight_decay}};
    if (c.kind == OptimizerKind::Sgd) {
        j["momentum"] = c.momentum;
    } else {
        j["beta1"] = c.beta1;
        j["beta2"] = c.beta2;
        j["eps"] = c.eps;
    }
    return j;
}

json to_json(const TrainConfig& c)
{
    return {{"method", std::string(to_string(c.method))},
            {"target", c.target.str()},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"optimizer", to_json(c.optimizer)},
            {"milestones", c.milestones},
            {"seed", c.seed},
            {"precision", std::string(to_string(c.precision))},
            {"kd", {{"beta", c.kd.beta}, {"temperature", c.kd.temperature}}},
            {"additional", {{"taps", c.additional.taps}, {"alphas", c.additional.alphas}}},
            {"max_steps", c.max_steps},
            {"eval_batch_size", c.eval_batch_size}};
}

json to_json(const DatasetSpec& d)
{
    json j = {{"source", std::string(to_string(d.source))}};
    if (!d.label.empty()) j["label"] = d.label;
    switch (d.source) {
    case SourceKind::Idx:
        j["train_images"] = d.train_images;
        j["train_labels"] = d.train_labels;
        j["test_images"] = d.test_images;
        j["test_labels"] = d.test_labels;
        j["num_classes"] = d.num_classes;
        break;
    case SourceKind::Cifar10:
        j["train_files"] = d.train_files;
        j["test_files"] = d.test_files;
        break;
    case SourceKind::Synthetic:
        j["kind"] = std::string(to_string(d.synth_kind));
        j["num_classes"] = d.num_classes;
        j["train_size"] = d.synth_train;
        j["test_size"] = d.synth_test;
        j["seed"] = d.synth_seed;
        break;
    }
    j["train_limit"] = d.train_limit;
    j["test_limit"] = d.test_limit;
    j["normalize"] = d.normalize;
    j["augment"] = std::string(to_string(d.augment));
    j["crop_padding"] = d.crop_padding;
    return j;
}

json to_json(const Normalization& n)
{
    return {{"mean", n.mean}, {"std", n.stddev}};
}

json to_json(const ExperimentConfig& c)
{
    json j = {{"name", c.name}, {"dataset", to_json(c.dataset)}};
    j["network"] = c.network.spec ? to_json(*c.network.spec) : json{{"preset", c.network.preset}};
    if (c.auxiliary) {
        j["auxiliary"] = c.auxiliary->spec ? to_json(*c.auxiliary->spec)
                                           : json{{"kernel", c.auxiliary->kernel}, {"width", c.auxiliary->width}};
    }
    j["pretrain"] = to_json(c.pretrain);
    j["finetune"] = to_json(c.finetune);
    return j;
}

NetworkSpec network_spec_from_json(const json& j)
{
    std::vector<std::string> errs;
    auto s = read_network(j, "network", errs);
    throw_if(errs);
    return s;
}

AuxiliarySpec auxiliary_spec_from_json(const json& j)
{
    std::vector<std::string> errs;
    auto s = read_auxiliary(j, "auxiliary", errs);
    throw_if(errs);
    return s;
}

OptimizerConfig optimizer_from_json(const json& j)
{
    std::vector<std::string> errs;
    auto c = read_optimizer(j, "optimizer", errs, {});
    throw_if(errs);
    return c;
}

TrainConfig train_config_from_json(const json& j, TrainConfig defaults)
{
    std::vector<std::string> errs;
    auto c = read_train(j, "train", errs, std::move(defaults));
    throw_if(errs);
    return c;
}

DatasetSpec dataset_spec_from_json(const json& j)
{
    std::vector<std::string> errs;
    auto d = read_dataset(j, "dataset", errs);
    throw_if(errs);
    return d;
}

Normalization normalization_from_json(const json& j)
{
    Normalization n;
    if (j.is_null()) return n;
    try {
        n.mean = j.at("mean").get<std::vector<double>>();
        n.stddev = j.at("std").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("normalization: ") + e.what());
    }
    if (n.mean.size() != n.stddev.size()) throw FormatError("normalization: mean and std lengths differ");
    return n;
}

ExperimentConfig experiment_from_json(const json& j)
{
    std::vector<std::string> errs;
    ExperimentConfig c;
    Reader r(j, "config", errs);
    r.get("name", c.name);
    r.require("dataset");
    if (const json* d = r.child("dataset")) c.dataset = read_dataset(*d, "dataset", errs);
    if (const json* n = r.child("network")) {
        if (n->is_string()) {
            c.network.preset = n->get<std::string>();
        } else if (n->is_object() && n->contains("preset")) {
            Reader nr(*n, "network", errs);
            nr.get("preset", c.network.preset);
            nr.finish();
        } else {
            c.network.spec = read_network(*n, "network", errs);
        }
        if (!c.network.spec && c.network.preset != "plain4" && c.network.preset != "res4")
            errs.push_back("network.preset: unknown preset '" + c.network.preset + "' (expected plain4 or res4)");
    }
    if (const json* a = r.child("auxiliary"); a && !a->is_null()) {
        AuxiliaryChoice choice;
        if (a->is_object() && a->contains("adaptors")) {
            choice.spec = read_auxiliary(*a, "auxiliary", errs);
        } else {
            Reader ar(*a, "auxiliary", errs);
            ar.get("kernel", choice.kernel);
            ar.get("width", choice.width);
            ar.finish();
            if (choice.kernel != 1 && choice.kernel != 3) errs.push_back("auxiliary.kernel must be 1 or 3");
            if (choice.width == 0) errs.push_back("auxiliary.width must be positive");
        }
        c.auxiliary = choice;
    }
    if (const json* p = r.child("pretrain")) c.pretrain = read_train(*p, "pretrain", errs, c.pretrain);
    if (const json* f = r.child("finetune")) c.finetune = read_train(*f, "finetune", errs, c.finetune);
    r.finish();
    throw_if(errs);
    return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    auto c = experiment_from_json(j);
    c.base_dir = path.parent_path();
    return c;
}

void save_experiment(const ExperimentConfig& config, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << to_json(config).dump(2) << "\n";
}

}  // namespace auxq
