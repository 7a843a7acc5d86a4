#include "auxq/trainer.hpp"

#include "auxq/log.hpp"
#include "auxq/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace auxq {

using nlohmann::json;

std::string stream_key(std::string_view stage, Method method, std::string_view purpose)
{
    return std::string(stage) + "/" + std::string(to_string(method)) + "/" + std::string(purpose);
}

template <typename T>
std::size_t label_rank(std::span<const T> row, int label)
{
    const T target = row[static_cast<std::size_t>(label)];
    std::size_t rank = 0;
    for (T v : row)
        if (v > target) ++rank;
    return rank;
}

namespace {

std::string engine_state(const std::mt19937_64& rng)
{
    std::ostringstream os;
    os << rng;
    return os.str();
}

std::mt19937_64 engine_from(const std::string& text)
{
    std::istringstream is(text);
    std::mt19937_64 rng;
    is >> rng;
    if (!is) throw FormatError("checkpoint: unreadable random engine state");
    return rng;
}

void check_data_fits(const NetworkSpec& spec, const DataSplits& data)
{
    const auto& d = data.train;
    std::vector<std::string> errs;
    if (d.channels != spec.in_channels || d.height != spec.in_height || d.width != spec.in_width)
        errs.push_back("data images are " + std::to_string(d.channels) + "x" + std::to_string(d.height) + "x" +
                       std::to_string(d.width) + " but network '" + spec.name + "' expects " +
                       std::to_string(spec.in_channels) + "x" + std::to_string(spec.in_height) + "x" +
                       std::to_string(spec.in_width));
    if (d.num_classes != spec.num_classes)
        errs.push_back("data has " + std::to_string(d.num_classes) + " classes, network has " +
                       std::to_string(spec.num_classes));
    if (!errs.empty()) throw ValidationError(std::move(errs));
}

template <typename T>
void tally(StepStats& s, const Tensor<T>& logits, std::span<const int> labels)
{
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto rank = label_rank<T>(std::span<const T>(logits.data().data() + r * classes, classes), labels[r]);
        s.correct1 += rank < 1;
        s.correct5 += rank < 5;
    }
    s.count += labels.size();
}

}  // namespace

template <typename T>
MetricsRow evaluate(Network<T>& net, const Dataset& data, const Normalization& norm, std::size_t batch_size)
{
    if (data.size() == 0) throw UsageError("evaluate: empty split");
    if (batch_size == 0) throw UsageError("evaluate: batch size must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    StepStats s;
    double loss_sum = 0;
    std::vector<std::size_t> idx;
    for (std::size_t from = 0; from < data.size(); from += batch_size) {
        const std::size_t to = std::min(data.size(), from + batch_size);
        idx.resize(to - from);
        for (std::size_t i = from; i < to; ++i) idx[i - from] = i;
        const auto batch = make_batch<T>(data, idx, norm);
        Tape<T> tape;
        auto out = net.forward(tape, tape.constant(batch.x), Mode::Eval);
        auto loss = ops::softmax_cross_entropy(out.logits, batch.labels);
        loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(idx.size());
        tally(s, out.logits.value(), batch.labels);
    }
    MetricsRow row;
    row.split = "test";
    row.loss = loss_sum / static_cast<double>(s.count);
    row.top1 = static_cast<double>(s.correct1) / static_cast<double>(s.count);
    if (net.spec().num_classes >= 5) row.top5 = static_cast<double>(s.correct5) / static_cast<double>(s.count);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
}

template <typename T>
Trainer<T>::Trainer(std::string stage, Network<T> net, TrainConfig cfg, const DataSplits& data)
    : stage_(std::move(stage)), net_(std::move(net)), cfg_(std::move(cfg)), opt_(cfg_.optimizer), data_(&data)
{
    if (auto errs = cfg_.validate(); !errs.empty()) throw ValidationError(std::move(errs));
    check_data_fits(net_.spec(), data);
    shuffle_ = make_stream(cfg_.seed, stream_key(stage_, cfg_.method, "shuffle"));
    augment_ = make_stream(cfg_.seed, stream_key(stage_, cfg_.method, "augment"));
    shuffle_at_epoch_start_ = shuffle_;
}

template <typename T>
void Trainer<T>::resolve_additional()
{
    auto& a = cfg_.additional;
    const std::size_t taps = net_.tap_signature().size();
    if (a.taps.empty()) {
        for (std::size_t i = 0; i + 1 < taps; ++i) a.taps.push_back(i);
        if (a.taps.empty()) a.taps.push_back(0);
    }
    if (a.alphas.empty()) a.alphas.assign(a.taps.size(), 0.3);
    if (a.alphas.size() != a.taps.size())
        throw UsageError("additional_loss: " + std::to_string(a.alphas.size()) + " weights for " +
                         std::to_string(a.taps.size()) + " heads");
}

template <typename T>
void Trainer<T>::init_log()
{
    log_.header = {{"stage", stage_},
                   {"method", std::string(to_string(cfg_.method))},
                   {"config", to_json(cfg_)},
                   {"network", to_json(net_.spec())},
                   {"seed", cfg_.seed},
                   {"precision", std::string(to_string(cfg_.precision))},
                   {"train_augmentation", std::string(to_string(data_->augment))},
                   {"eval_augmentation", false},
                   {"normalization", to_json(data_->norm)}};
    if (aux_) log_.header["auxiliary"] = to_json(aux_->spec());
}

template <typename T>
Trainer<T> Trainer<T>::pretraining(const NetworkSpec& spec, const TrainConfig& config, const DataSplits& data)
{
    NetworkSpec s = spec;
    s.policy = PrecisionPolicy::full();
    TrainConfig c = config;
    c.method = Method::Baseline;
    c.target = QuantScheme::full();
    Trainer t("pretrain", Network<T>(s, c.seed), c, data);
    t.init_log();
    return t;
}

template <typename T>
Trainer<T> Trainer<T>::continued(const Checkpoint& from, const TrainConfig& config, const DataSplits& data)
{
    TrainConfig c = config;
    c.method = Method::Baseline;
    c.target = QuantScheme::full();
    auto net = network_from_checkpoint<T>(from);
    net.set_policy(PrecisionPolicy::full());
    Trainer t("pretrain", std::move(net), c, data);
    t.init_log();
    return t;
}

template <typename T>
Trainer<T> Trainer<T>::finetuning(const Checkpoint& from, const TrainConfig& config, const DataSplits& data,
                                  std::optional<AuxiliarySpec> aux)
{
    if (config.method == Method::Auxi && !aux)
        throw ValidationError({"method auxi needs an auxiliary module spec"});
    if (config.method != Method::Auxi && aux)
        throw ValidationError({"an auxiliary module spec was given but method is " +
                               std::string(to_string(config.method))});
    auto net = network_from_checkpoint<T>(from);
    net.set_policy(PrecisionPolicy::standard(config.target));
    Trainer t("finetune", std::move(net), config, data);

    switch (config.method) {
    case Method::Baseline: break;
    case Method::Auxi: {
        if (auto errs = aux->validate(t.net_.spec()); !errs.empty()) throw ValidationError(std::move(errs));
        t.aux_.emplace(*aux, t.net_.tap_signature(), config.seed);
        break;
    }
    case Method::AdditionalLoss:
        t.resolve_additional();
        t.heads_.emplace(t.cfg_.additional.taps, t.net_.tap_signature(), t.net_.spec().num_classes, config.seed);
        break;
    case Method::Kd: {
        auto teacher = network_from_checkpoint<T>(from);
        teacher.set_policy(PrecisionPolicy::full());
        teacher.set_frozen(true);
        t.teacher_.emplace(std::move(teacher));
        break;
    }
    }
    t.init_log();
    return t;
}

template <typename T>
Trainer<T> Trainer<T>::resume(const Checkpoint& ckpt, const DataSplits& data)
{
    if (!ckpt.extra.contains("train_config") || !ckpt.extra.contains("stage"))
        throw FormatError("checkpoint: no training state to resume from");
    const auto cfg = train_config_from_json(ckpt.extra.at("train_config"), {});
    Trainer t(ckpt.extra.at("stage").get<std::string>(), network_from_checkpoint<T>(ckpt), cfg, data);
    if (ckpt.auxiliary) {
        t.aux_.emplace(*ckpt.auxiliary, t.net_.tap_signature(), cfg.seed);
        restore(ckpt, t.aux_->parameters(), t.aux_->batchnorm_names(), t.aux_->batchnorm_states());
    }
    if (cfg.method == Method::AdditionalLoss) {
        t.resolve_additional();
        t.heads_.emplace(t.cfg_.additional.taps, t.net_.tap_signature(), t.net_.spec().num_classes, cfg.seed);
        std::vector<std::string> none;
        std::vector<BatchNormState<T>> no_bn;
        restore(ckpt, t.heads_->parameters(), none, no_bn);
    }
    if (cfg.method == Method::Kd) {
        Network<T> teacher(ckpt.network, 0);
        teacher.set_policy(PrecisionPolicy::full());
        Checkpoint sub;
        for (const auto& r : ckpt.tensors)
            if (r.name.starts_with("teacher/")) {
                auto copy = r;
                copy.name = r.name.substr(8);
                sub.tensors.push_back(std::move(copy));
            }
        restore_network(sub, teacher);
        teacher.set_frozen(true);
        t.teacher_.emplace(std::move(teacher));
    }
    t.opt_.load_state(restore_optimizer_state<T>(ckpt));
    t.epoch_ = ckpt.epoch;
    t.step_ = ckpt.step;
    t.shuffle_ = engine_from(ckpt.rng.at("shuffle"));
    t.shuffle_at_epoch_start_ = t.shuffle_;
    t.augment_ = engine_from(ckpt.rng.at("augment"));
    t.cursor_ = ckpt.extra.value("cursor", std::size_t{0});
    if (t.cursor_ > 0) t.order_ = shuffled_indices(data.train.size(), t.shuffle_);
    t.init_log();
    return t;
}

template <typename T>
Checkpoint Trainer<T>::checkpoint() const
{
    Checkpoint c;
    c.dtype = std::is_same_v<T, float> ? Precision::F32 : Precision::F64;
    c.network = net_.spec();
    capture_network(c, net_);
    if (aux_) {
        c.auxiliary = aux_->spec();
        capture(c, aux_->parameters(), aux_->batchnorm_names(), aux_->batchnorm_states());
    }
    if (heads_) capture(c, heads_->parameters(), {}, std::vector<BatchNormState<T>>{});
    if (teacher_) {
        Checkpoint sub;
        capture_network(sub, *teacher_);
        for (auto& r : sub.tensors) {
            r.name = "teacher/" + r.name;
            c.tensors.push_back(std::move(r));
        }
    }
    capture_optimizer(c, opt_);
    c.rng["shuffle"] = engine_state(shuffle_at_epoch_start_);
    c.rng["augment"] = engine_state(augment_);
    c.epoch = epoch_;
    c.step = step_;
    c.extra = {{"stage", stage_},
               {"train_config", to_json(cfg_)},
               {"normalization", to_json(data_->norm)},
               {"cursor", cursor_}};
    return c;
}

template <typename T>
StepStats Trainer<T>::step(const Batch<T>& batch, double lr, ForwardTrace<T>* trace)
{
    StepStats s;
    Tape<T> tape;
    auto x = tape.constant(batch.x);
    GradientMap<T> grads;

    // Quantized weights are produced on the tape from the masters inside forward.
    auto backbone = net_.forward(tape, x, Mode::Train, trace);
    auto main_loss = ops::softmax_cross_entropy(backbone.logits, batch.labels);
    s.loss = static_cast<double>(main_loss.value().item());

    switch (cfg_.method) {
    case Method::Baseline:
        s.total_loss = s.loss;
        grads = tape.backward(main_loss);
        break;
    case Method::Auxi: {
        auto y_aux = aux_->forward(tape, backbone.taps, Mode::Train);
        JointLoss<T> joint{main_loss, ops::softmax_cross_entropy(y_aux, batch.labels)};
        s.aux_loss = static_cast<double>(joint.aux.value().item());
        s.total_loss = s.loss + s.aux_loss;
        grads = joint_gradients(tape, joint, *aux_);
        break;
    }
    case Method::AdditionalLoss: {
        auto add = additional_loss_baseline(main_loss, *heads_, std::span<const Var<T>>(backbone.taps), batch.labels,
                                            std::span<const double>(cfg_.additional.alphas));
        s.total_loss = static_cast<double>(add.total.value().item());
        grads = tape.backward(add.total);
        break;
    }
    case Method::Kd: {
        auto kd = kd_baseline(backbone.logits, *teacher_, batch.x, batch.labels, cfg_.kd.beta, cfg_.kd.temperature);
        s.total_loss = static_cast<double>(kd.total.value().item());
        grads = tape.backward(kd.total);
        break;
    }
    }
    if (!std::isfinite(s.total_loss)) throw NumericFault("numeric fault: loss is not finite");

    // Gradients w.r.t. the quantized weights land on the masters unchanged.
    opt_.step(net_.parameters(), grads, lr);
    if (aux_) opt_.step(aux_->parameters(), grads, lr);
    if (heads_) opt_.step(heads_->parameters(), grads, lr);
    ++step_;
    tally(s, backbone.logits.value(), batch.labels);
    return s;
}

template <typename T>
bool Trainer<T>::finished() const noexcept
{
    return epoch_ >= cfg_.epochs || (cfg_.max_steps > 0 && step_ >= cfg_.max_steps);
}

template <typename T>
void Trainer<T>::run_epoch()
{
    const auto& train = data_->train;
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cfg_.schedule().at(epoch_);
    if (cursor_ == 0) {
        shuffle_at_epoch_start_ = shuffle_;
        order_ = shuffled_indices(train.size(), shuffle_);
    }
    last_good_ = checkpoint();

    StepStats total;
    double loss_sum = 0;
    const std::size_t bs = cfg_.batch_size;
    const std::size_t batches = (train.size() + bs - 1) / bs;
    while (cursor_ < batches && !(cfg_.max_steps > 0 && step_ >= cfg_.max_steps)) {
        const std::size_t from = cursor_ * bs, to = std::min(train.size(), from + bs);
        const auto batch = make_batch<T>(train, std::span<const std::size_t>(order_).subspan(from, to - from),
                                         data_->norm, data_->augment, &augment_, data_->crop_padding);
        StepStats s;
        try {
            s = step(batch, lr);
        } catch (const NumericFault& e) {
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch_ + 1) + ", step " +
                                      std::to_string(step_ + 1) + ": " + e.what(),
                                  *last_good_);
        }
        loss_sum += s.loss * static_cast<double>(s.count);
        total.correct1 += s.correct1;
        total.correct5 += s.correct5;
        total.count += s.count;
        ++cursor_;
    }
    if (cursor_ < batches) return;  // step cap hit mid-epoch
    cursor_ = 0;
    shuffle_at_epoch_start_ = shuffle_;
    ++epoch_;

    MetricsRow row;
    row.epoch = epoch_;
    row.split = "train";
    row.lr = lr;
    if (total.count > 0) {
        row.loss = loss_sum / static_cast<double>(total.count);
        row.top1 = static_cast<double>(total.correct1) / static_cast<double>(total.count);
        if (net_.spec().num_classes >= 5)
            row.top5 = static_cast<double>(total.correct5) / static_cast<double>(total.count);
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_.rows.push_back(row);

    auto test = evaluate(data_->test);
    test.epoch = epoch_;
    test.lr = lr;
    log_.rows.push_back(test);
    log::debug(stage_ + " epoch " + std::to_string(epoch_) + " test top1 " + std::to_string(test.top1));
}

template <typename T>
RunResult Trainer<T>::run()
{
    while (!finished()) run_epoch();
    return {checkpoint(), log_};
}

template <typename T>
MetricsRow Trainer<T>::evaluate(const Dataset& data)
{
    return auxq::evaluate(net_, data, data_->norm, cfg_.eval_batch_size);
}

template class Trainer<float>;
template class Trainer<double>;
template MetricsRow evaluate(Network<float>&, const Dataset&, const Normalization&, std::size_t);
template MetricsRow evaluate(Network<double>&, const Dataset&, const Normalization&, std::size_t);
template std::size_t label_rank(std::span<const float>, int);
template std::size_t label_rank(std::span<const double>, int);

RunResult pretrain(const NetworkSpec& spec, const DataSplits& data, const TrainConfig& config)
{
    if (config.precision == Precision::F64) return Trainer<double>::pretraining(spec, config, data).run();
    return Trainer<float>::pretraining(spec, config, data).run();
}

RunResult finetune(const Checkpoint& from, const DataSplits& data, const TrainConfig& config,
                   std::optional<AuxiliarySpec> aux)
{
    if (config.precision == Precision::F64) return Trainer<double>::finetuning(from, config, data, aux).run();
    return Trainer<float>::finetuning(from, config, data, aux).run();
}

MetricsRow evaluate(const Checkpoint& ckpt, const Dataset& data, const Normalization& norm, std::size_t batch_size)
{
    if (ckpt.dtype == Precision::F64) {
        auto net = network_from_checkpoint<double>(ckpt);
        return evaluate(net, data, norm, batch_size);
    }
    auto net = network_from_checkpoint<float>(ckpt);
    return evaluate(net, data, norm, batch_size);
}

}  // namespace auxq
