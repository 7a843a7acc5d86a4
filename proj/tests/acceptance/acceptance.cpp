// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//   acceptance            all criteria
//   acceptance 3 7        only the listed ones

#include "auxq/checkpoint.hpp"
#include "auxq/comparison.hpp"
#include "auxq/kernels.hpp"
#include "auxq/trainer.hpp"
#include "testing.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace auxq;
using auxq::testing::random_labels;
using auxq::testing::random_tensor;
using auxq::testing::tiny_spec;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

bool same_params(const std::vector<Parameter<double>>& a, const std::vector<Parameter<double>>& b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].name != b[i].name || !bit_equal(a[i].value, b[i].value)) return false;
    return true;
}

Tensor<double> grad_of(const Tensor<double>& x, const std::function<Var<double>(Var<double>)>& f)
{
    Parameter<double> p{"x", x};
    Tape<double> tape;
    auto g = tape.backward(ops::sum(f(tape.parameter(p))));
    auto it = g.find("x");
    return it == g.end() ? Tensor<double>(x.shape()) : it->second;
}

// ---- 1: finite differences on small full-precision networks

Verdict gradient_oracle()
{
    const auto t0 = Clock::now();
    double worst = 0;
    std::string where;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto rng = make_stream(seed, "acceptance-fd");
        const auto kind = seed % 2 ? BlockKind::Plain : BlockKind::Residual;
        const std::size_t in_ch = 1 + seed % 2;
        Network<double> net(tiny_spec(kind, in_ch, 3), 100 + seed);
        // Move BN affine params off their init so every path carries signal.
        for (auto& p : net.parameters())
            if (p.name.ends_with(".beta") || p.name.ends_with(".gamma"))
                for (auto& v : p.value.data()) v += 0.3 * standard_normal(rng);
        const auto x = random_tensor<double>({3, in_ch, 8, 8}, rng);
        const auto labels = random_labels(3, 3, rng);
        auto build = [&](Tape<double>& t) {
            return ops::softmax_cross_entropy(net.forward(t, t.constant(x), Mode::Train).logits, labels);
        };
        std::vector<Parameter<double>*> params;
        for (auto& p : net.parameters()) params.push_back(&p);
        const auto rep = auxq::testing::finite_difference_check(params, build);
        if (rep.max_rel_error > worst) {
            worst = rep.max_rel_error;
            where = fmt("net %d %s", int(seed), rep.worst.c_str());
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-5 && secs < 60,
            fmt("5 networks, max rel error %.3g (%s), %.1f s", worst, where.c_str(), secs)};
}

// ---- 2: straight-through estimator contracts

Verdict ste_contracts()
{
    Tensor<double> a(Shape{101});
    for (std::size_t i = 0; i < 101; ++i) a[i] = -1.0 + 3.0 * static_cast<double>(i) / 100.0;
    std::size_t bad = 0;
    for (int k = 1; k <= 8; ++k) {
        const auto g = grad_of(a, [k](Var<double> v) { return quant::quantize_activation(v, k); });
        for (std::size_t i = 0; i < 101; ++i)
            if (g[i] != ((a[i] >= 0 && a[i] <= 1) ? 1.0 : 0.0)) ++bad;
    }
    Tensor<double> b(Shape{101});
    for (std::size_t i = 0; i < 101; ++i) b[i] = -2.0 + 4.0 * static_cast<double>(i) / 100.0;
    const auto gb = grad_of(b, [](Var<double> v) { return quant::binarize(v); });
    for (std::size_t i = 0; i < 101; ++i)
        if (gb[i] != (std::abs(b[i]) <= 1 ? 1.0 : 0.0)) ++bad;
    return {bad == 0, fmt("activation k=1..8 and binarizer on 101-point grids, %d mismatches", int(bad))};
}

// ---- 3: quantizer properties

Verdict quantizer_properties()
{
    const auto t0 = Clock::now();
    std::vector<std::string> problems;
    auto rng = make_stream(3, "acceptance-quant");
    for (int k = 1; k <= 8; ++k) {
        const double n = std::pow(2.0, k) - 1;
        Tensor<double> x(Shape{10000});
        for (auto& v : x.data()) v = uniform01(rng);
        Tape<double> tape;
        const auto y = quant::quantize_unit(tape.constant(x), k).value();
        const auto yy = quant::quantize_unit(tape.constant(y), k).value();
        if (!bit_equal(y, yy)) problems.push_back(fmt("k=%d not idempotent", k));
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double level = std::round(y[i] * n);
            if (!(level >= 0 && level <= n && level / n == y[i])) {
                problems.push_back(fmt("k=%d off grid %.17g", k, y[i]));
                break;
            }
        }
        // monotone: sort the inputs, outputs must not decrease
        std::vector<std::size_t> order(x.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto i, auto j) { return x[i] < x[j]; });
        for (std::size_t i = 1; i < order.size(); ++i)
            if (y[order[i]] < y[order[i - 1]]) {
                problems.push_back(fmt("k=%d not monotone", k));
                break;
            }
        const auto ends = quant::quantize_unit(tape.constant(Tensor<double>(Shape{2}, {0.0, 1.0})), k).value();
        if (ends[0] != 0.0 || ends[1] != 1.0) problems.push_back(fmt("k=%d endpoints move", k));

        const auto w = random_tensor<double>({10000}, rng, 1.5);
        for (double v : quant::quantize_weight(tape.constant(w), k).value().values())
            if (!(v >= -1.0 && v <= 1.0)) {
                problems.push_back(fmt("k=%d weight %.17g outside [-1, 1]", k, v));
                break;
            }
        for (double v : quant::quantize_weight(tape.constant(Tensor<double>(Shape{4, 3})), k).value().values())
            if (v != 0.0) {
                problems.push_back(fmt("k=%d zero layer gives %.17g", k, v));
                break;
            }
    }
    const double secs = seconds_since(t0);
    if (secs >= 10) problems.push_back(fmt("took %.1f s", secs));
    std::string detail = fmt("k=1..8, 10^4 inputs each, %.2f s", secs);
    for (const auto& p : problems) detail += "; " + p;
    return {problems.empty(), detail};
}

// ---- 4: H detaches from F

const DataSplits& blobs()
{
    static const auto d = load_dataset(auxq::testing::synthetic_spec(SynthKind::Blobs, 4, 256, 128, 3));
    return d;
}

TrainConfig small_train(Method m, std::size_t epochs)
{
    auto c = TrainConfig::finetune_defaults();
    c.method = m;
    c.epochs = epochs;
    c.batch_size = 16;
    c.precision = Precision::F64;
    return c;
}

const Checkpoint& blobs_pretrained()
{
    static const auto c = [] {
        auto cfg = TrainConfig::pretrain_defaults();
        cfg.epochs = 1;
        cfg.batch_size = 16;
        cfg.precision = Precision::F64;
        return pretrain(auxq::testing::synthetic_net(4), blobs(), cfg).checkpoint;
    }();
    return c;
}

Verdict detachment()
{
    std::size_t mismatches = 0, inputs = 0;
    for (auto kind : {BlockKind::Residual, BlockKind::Plain}) {
        auto spec = tiny_spec(kind);
        spec.policy = PrecisionPolicy::standard(QuantScheme::uniform(2));
        Network<double> with_h(spec, 4), bare(spec, 4);
        AuxiliaryModule<double> aux(AuxiliarySpec::for_backbone(spec, 1, 5), with_h.tap_signature(), 4);
        auto rng = make_stream(4, "acceptance-detach");
        for (int b = 0; b < 10; ++b) {
            const auto x = random_tensor<double>({5, 1, 8, 8}, rng);
            inputs += 5;
            for (auto mode : {Mode::Train, Mode::Eval}) {
                Tape<double> t1, t2;
                auto mixed = forward_mixed(with_h, aux, t1, t1.constant(x), mode);
                auto alone = bare.forward(t2, t2.constant(x), mode);
                if (!bit_equal(mixed.y_main.value(), alone.logits.value())) ++mismatches;
            }
        }
    }

    auto cfg = small_train(Method::Auxi, 2);
    auto trainer = Trainer<double>::finetuning(blobs_pretrained(), cfg, blobs(),
                                               AuxiliarySpec::for_backbone(auxq::testing::synthetic_net(4), 1, 8));
    trainer.run();
    const auto in_training = trainer.evaluate(blobs().test);
    const auto ckpt = decode_checkpoint(encode_checkpoint(trainer.checkpoint()));
    auto f_only = network_from_checkpoint<double>(ckpt);
    const auto reloaded = evaluate(f_only, blobs().test, blobs().norm);
    const bool same = reloaded.loss == in_training.loss && reloaded.top1 == in_training.top1 &&
                      reloaded.top5 == in_training.top5;
    return {mismatches == 0 && same,
            fmt("%d inputs x 2 modes, %d logit mismatches; bare F from checkpoint top1 %.6f loss %.17g vs %.6f %.17g",
                int(inputs), int(mismatches), reloaded.top1, reloaded.loss, in_training.top1, in_training.loss)};
}

// ---- 5: joint_backward averages the two independent gradients

Verdict averaging()
{
    double worst = 0;
    std::size_t shared = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto spec = tiny_spec(seed % 2 ? BlockKind::Plain : BlockKind::Residual);
        spec.policy = PrecisionPolicy::standard(seed % 3 == 0 ? QuantScheme::binary() : QuantScheme::uniform(1 + seed % 4));
        auto rng = make_stream(seed, "acceptance-avg");
        const auto x = random_tensor<double>({5, 1, 8, 8}, rng);
        const auto labels = random_labels(5, 3, rng);
        auto independent = [&](bool main) {
            Network<double> net(spec, seed);
            AuxiliaryModule<double> aux(AuxiliarySpec::for_backbone(spec, 1, 5), net.tap_signature(), seed);
            Tape<double> t;
            auto o = forward_mixed(net, aux, t, t.constant(x), Mode::Train);
            const auto l = joint_loss(o.y_main, o.y_aux, labels);
            return t.backward(main ? l.main : l.aux);
        };
        const auto g_main = independent(true), g_aux = independent(false);

        Network<double> net(spec, seed);
        AuxiliaryModule<double> aux(AuxiliarySpec::for_backbone(spec, 1, 5), net.tap_signature(), seed);
        Tape<double> t;
        auto o = forward_mixed(net, aux, t, t.constant(x), Mode::Train);
        const auto report = joint_backward(t, joint_loss(o.y_main, o.y_aux, labels), net, aux);
        for (const auto& p : net.parameters()) {
            const auto& j = report.at(p.name);
            const auto m = g_main.find(p.name), a = g_aux.find(p.name);
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double gm = m == g_main.end() ? 0.0 : m->second[i];
                const double ga = a == g_aux.end() ? 0.0 : a->second[i];
                worst = std::max(worst, std::abs(j.g_applied[i] - 0.5 * (gm + ga)));
            }
            ++shared;
        }
    }
    return {worst < 1e-12, fmt("20 instances, %d backbone tensors, max abs deviation %.3g", int(shared), worst)};
}

// ---- 6: Full-scheme baseline is continued pretraining

Verdict full_precision_collapse()
{
    auto pc = TrainConfig::pretrain_defaults();
    pc.batch_size = 16;
    pc.precision = Precision::F64;
    pc.optimizer.lr = 0.05;
    auto fc = pc;
    fc.method = Method::Baseline;
    fc.target = QuantScheme::full();
    auto a = Trainer<double>::continued(blobs_pretrained(), pc, blobs());
    auto b = Trainer<double>::finetuning(blobs_pretrained(), fc, blobs(), std::nullopt);
    auto rng = make_stream(6, "acceptance-batches");
    for (int s = 0; s < 10; ++s) {
        std::vector<std::size_t> idx(16);
        for (auto& i : idx) i = uniform_index(rng, blobs().train.size());
        const auto batch = make_batch<double>(blobs().train, idx, blobs().norm);
        const auto sa = a.step(batch, 0.05), sb = b.step(batch, 0.05);
        if (sa.loss != sb.loss) return {false, fmt("step %d loss %.17g vs %.17g", s + 1, sa.loss, sb.loss)};
        if (!same_params(a.network().parameters(), b.network().parameters()))
            return {false, fmt("step %d parameters differ", s + 1)};
    }
    return {true, "10 steps, losses and parameters bit-identical"};
}

// ---- 7: desk-scale directional comparison on MNIST

Verdict directional_reproduction()
{
    const auto t0 = Clock::now();
    auto cfg = load_experiment(std::filesystem::path(AUXQ_CONFIG_DIR) / "mnist5k_plain4.json");
    const auto data = load_dataset(cfg.dataset, cfg.base_dir);
    ComparisonOptions opts;
    opts.methods = {Method::Baseline, Method::Auxi};
    opts.seeds = {1, 2, 3, 4, 5};
    opts.progress = [&](const std::string& m) { std::cerr << fmt("[%6.0f s] ", seconds_since(t0)) << m << "\n"; };
    const auto r = run_comparison(cfg, data, opts);
    const double secs = seconds_since(t0);

    std::ostringstream table;
    std::size_t epoch1_wins = 0, failed = 0;
    for (auto seed : opts.seeds) {
        const auto* b = r.cell(Method::Baseline, seed);
        const auto* x = r.cell(Method::Auxi, seed);
        if (!b->ok || !x->ok) {
            ++failed;
            continue;
        }
        if (x->epoch1_test_top1 > b->epoch1_test_top1) ++epoch1_wins;
        table << fmt("  seed %d  baseline final %.4f epoch1 %.4f | auxi final %.4f epoch1 %.4f\n", int(seed),
                     b->final_test_top1, b->epoch1_test_top1, x->final_test_top1, x->epoch1_test_top1);
    }
    const double mb = r.summary_for(Method::Baseline)->mean_top1;
    const double mx = r.summary_for(Method::Auxi)->mean_top1;
    std::cout << "  " << cfg.name << ": plain4, " << cfg.finetune.target.str() << ", " << cfg.finetune.epochs
              << " epochs, " << data.train.size() << " train / " << data.test.size() << " test\n"
              << table.str();
    const bool pass = failed == 0 && mx > mb && epoch1_wins >= 4 && secs < 1800;
    return {pass, fmt("mean final top1 auxi %.4f vs baseline %.4f; epoch-1 wins %d/5; %d failed cells; %.0f s", mx, mb,
                      int(epoch1_wins), int(failed), secs)};
}

// ---- 8: additional-loss and KD reduce to the baseline

Verdict baseline_reductions()
{
    std::vector<std::string> problems;
    auto cfg = small_train(Method::Baseline, 1);
    auto add = cfg;
    add.method = Method::AdditionalLoss;
    add.additional.taps = {0, 1};
    add.additional.alphas = {0.0, 0.0};
    auto kd = cfg;
    kd.method = Method::Kd;
    kd.kd.beta = 0.0;

    auto base = Trainer<double>::finetuning(blobs_pretrained(), cfg, blobs(), std::nullopt);
    auto t_add = Trainer<double>::finetuning(blobs_pretrained(), add, blobs(), std::nullopt);
    auto t_kd = Trainer<double>::finetuning(blobs_pretrained(), kd, blobs(), std::nullopt);
    auto rng = make_stream(8, "acceptance-reduce");
    for (int s = 0; s < 10 && problems.empty(); ++s) {
        std::vector<std::size_t> idx(16);
        for (auto& i : idx) i = uniform_index(rng, blobs().train.size());
        const auto batch = make_batch<double>(blobs().train, idx, blobs().norm);
        const auto sb = base.step(batch, 1e-3), sa = t_add.step(batch, 1e-3), sk = t_kd.step(batch, 1e-3);
        if (sa.total_loss != sb.total_loss) problems.push_back(fmt("additional loss differs at step %d", s + 1));
        if (sk.total_loss != sb.total_loss) problems.push_back(fmt("kd loss differs at step %d", s + 1));
        if (!same_params(base.network().parameters(), t_add.network().parameters()))
            problems.push_back(fmt("additional parameters differ at step %d", s + 1));
        if (!same_params(base.network().parameters(), t_kd.network().parameters()))
            problems.push_back(fmt("kd parameters differ at step %d", s + 1));
    }

    // Student logits equal to the teacher's: the distillation term vanishes.
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Network<double> teacher(tiny_spec(), seed), student(tiny_spec(), seed);
        teacher.set_frozen(true);
        auto r = make_stream(seed, "acceptance-kd");
        const auto x = random_tensor<double>({6, 1, 8, 8}, r);
        const auto labels = random_labels(6, 3, r);
        for (double temp : {1.0, 4.0}) {
            Tape<double> tape;
            auto logits = student.forward(tape, tape.constant(x), Mode::Eval).logits;
            worst = std::max(worst, std::abs(kd_baseline(logits, teacher, x, labels, 1.0, temp).distill.value().item()));
        }
    }
    if (!(worst < 1e-12)) problems.push_back(fmt("distillation term %.3g with identical logits", worst));
    std::string detail = fmt("10 steps each; identical-logit distillation term max %.3g", worst);
    for (const auto& p : problems) detail += "; " + p;
    return {problems.empty(), detail};
}

// ---- 9: stored config + seed reruns bit-identically

Verdict reproducibility()
{
    const int saved = kernels::num_threads();
    kernels::set_num_threads(1);
    ExperimentConfig c;
    c.name = "acceptance-repro";
    c.dataset = auxq::testing::synthetic_spec(SynthKind::Spirals, 4, 192, 96, 11);
    c.dataset.augment = Augment::CropFlip;
    c.network.spec = auxq::testing::synthetic_net(4, BlockKind::Residual);
    c.auxiliary = AuxiliaryChoice{3, 8, std::nullopt};
    c.pretrain.epochs = 2;
    c.pretrain.batch_size = 32;
    c.finetune.epochs = 2;
    c.finetune.batch_size = 32;
    c.finetune.milestones = {1};
    const auto dir = auxq::testing::temp_dir("acceptance_repro");
    save_experiment(c, dir / "experiment.json");

    auto once = [&](Method m) {
        auto cfg = load_experiment(dir / "experiment.json");
        cfg.finetune.method = m;
        const auto data = load_dataset(cfg.dataset, cfg.base_dir);
        const auto backbone = cfg.backbone(data.train);
        const auto pre = pretrain(backbone, data, cfg.pretrain);
        std::optional<AuxiliarySpec> aux;
        if (m == Method::Auxi) aux = cfg.auxiliary_spec(backbone);
        auto ft = finetune(pre.checkpoint, data, cfg.finetune, aux);
        return std::make_tuple(pre.metrics, ft.metrics, encode_checkpoint(ft.checkpoint));
    };
    std::vector<std::string> problems;
    for (auto m : {Method::Baseline, Method::Auxi, Method::AdditionalLoss, Method::Kd}) {
        const auto [p1, f1, b1] = once(m);
        const auto [p2, f2, b2] = once(m);
        if (f1.rows.empty()) problems.push_back(std::string(to_string(m)) + " produced no rows");
        if (!same_measurements(p1.rows, p2.rows) || !same_measurements(f1.rows, f2.rows))
            problems.push_back(std::string(to_string(m)) + " metrics differ");
        if (b1 != b2) problems.push_back(std::string(to_string(m)) + " checkpoint bytes differ");
    }
    kernels::set_num_threads(saved);
    std::string detail = "4 methods, stored config rerun twice, single-threaded";
    for (const auto& p : problems) detail += "; " + p;
    return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<const char*, Verdict (*)()>> criteria = {
        {"gradient oracle", gradient_oracle},
        {"STE contracts", ste_contracts},
        {"quantizer properties", quantizer_properties},
        {"detachment", detachment},
        {"joint gradient averaging", averaging},
        {"full-precision collapse", full_precision_collapse},
        {"directional comparison (MNIST subset)", directional_reproduction},
        {"baseline reductions", baseline_reductions},
        {"reproducibility", reproducibility},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.contains(id)) continue;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        if (!v.pass) ++failures;
        std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
                  << v.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
