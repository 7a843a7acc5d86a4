#include "auxq/checkpoint.hpp"

#include "auxq/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace auxq {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'A', 'U', 'X', 'Q', 'C', 'K', 'P', 'T'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v)
{
    std::uint8_t b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    out.insert(out.end(), b, b + sizeof(U));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t at)
{
    std::uint8_t b[sizeof(U)];
    std::memcpy(b, in.data() + at, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
}

std::size_t width_of(Precision p)
{
    return p == Precision::F32 ? 4 : 8;
}

std::string slot_name(const std::string& param, std::size_t i)
{
    return param + "#" + std::to_string(i);
}

}  // namespace

const TensorRecord* Checkpoint::find(std::string_view name, std::string_view role) const
{
    for (const auto& t : tensors)
        if (t.name == name && t.role == role) return &t;
    return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt)
{
    const std::size_t w = width_of(ckpt.dtype);
    json tensors = json::array();
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        if (numel(t.shape) != t.values.size())
            throw InternalError("checkpoint: tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                                " values for shape " + to_string(t.shape));
        const std::size_t nbytes = t.values.size() * w;
        tensors.push_back({{"name", t.name}, {"role", t.role}, {"shape", t.shape}, {"offset", offset}, {"nbytes", nbytes}});
        offset += nbytes;
    }
    json header = {{"format", "auxq-checkpoint"},
                   {"version", kCheckpointVersion},
                   {"endianness", "little"},
                   {"dtype", std::string(to_string(ckpt.dtype))},
                   {"network", to_json(ckpt.network)},
                   {"auxiliary", ckpt.auxiliary ? to_json(*ckpt.auxiliary) : json(nullptr)},
                   {"tensors", tensors},
                   {"payload_bytes", offset},
                   {"optimizer", ckpt.optimizer},
                   {"rng", ckpt.rng},
                   {"progress", {{"epoch", ckpt.epoch}, {"step", ckpt.step}}},
                   {"extra", ckpt.extra}};
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    while (out.size() % 8 != 0) out.push_back(0);
    out.reserve(out.size() + offset);
    for (const auto& t : ckpt.tensors)
        for (double v : t.values) {
            if (ckpt.dtype == Precision::F32)
                put_le<float>(out, static_cast<float>(v));
            else
                put_le<double>(out, v);
        }
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw FormatError("checkpoint: missing AUXQCKPT magic");
    const auto version = get_le<std::uint32_t>(bytes, 8);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (this build reads " +
                          std::to_string(kCheckpointVersion) + ")");
    const auto hlen = get_le<std::uint64_t>(bytes, 12);
    if (hlen > bytes.size() - 20) throw FormatError("checkpoint: header length exceeds file size");

    json h;
    try {
        h = json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
    }
    std::size_t payload = 20 + hlen;
    payload = (payload + 7) / 8 * 8;

    Checkpoint c;
    try {
        if (h.at("endianness") != "little") throw FormatError("checkpoint: only little-endian payloads are supported");
        c.dtype = parse_precision(h.at("dtype").get<std::string>());
        c.network = network_spec_from_json(h.at("network"));
        if (!h.at("auxiliary").is_null()) c.auxiliary = auxiliary_spec_from_json(h.at("auxiliary"));
        c.optimizer = h.value("optimizer", json(nullptr));
        c.rng = h.value("rng", std::map<std::string, std::string>{});
        c.epoch = h.at("progress").at("epoch").get<std::size_t>();
        c.step = h.at("progress").at("step").get<std::size_t>();
        c.extra = h.value("extra", json::object());
        const std::size_t w = width_of(c.dtype);
        const auto total = h.at("payload_bytes").get<std::size_t>();
        if (payload > bytes.size() || bytes.size() - payload < total)
            throw FormatError("checkpoint: payload truncated (" + std::to_string(bytes.size() - std::min(payload, bytes.size())) +
                              " of " + std::to_string(total) + " bytes)");
        for (const auto& t : h.at("tensors")) {
            TensorRecord r;
            r.name = t.at("name").get<std::string>();
            r.role = t.at("role").get<std::string>();
            r.shape = t.at("shape").get<Shape>();
            const auto off = t.at("offset").get<std::size_t>();
            const auto nbytes = t.at("nbytes").get<std::size_t>();
            const std::size_t n = numel(r.shape);
            if (nbytes != n * w || off + nbytes > total)
                throw FormatError("checkpoint: tensor '" + r.name + "' has an inconsistent extent");
            r.values.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t at = payload + off + i * w;
                r.values[i] = c.dtype == Precision::F32 ? static_cast<double>(get_le<float>(bytes, at))
                                                        : get_le<double>(bytes, at);
            }
            c.tensors.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    } catch (const ValidationError& e) {
        throw FormatError(std::string("checkpoint: invalid spec in header: ") + e.what());
    }
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    const auto bytes = encode_checkpoint(ckpt);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write '" + tmp + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read checkpoint '" + path.string() + "'");
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes);
}

template <typename T>
void capture(Checkpoint& ckpt, const std::vector<Parameter<T>>& params, const std::vector<std::string>& bn_names,
             const std::vector<BatchNormState<T>>& bn)
{
    auto add = [&](const std::string& name, const char* role, const Tensor<T>& t) {
        TensorRecord r{name, role, t.shape(), {}};
        r.values.assign(t.data().begin(), t.data().end());
        ckpt.tensors.push_back(std::move(r));
    };
    for (const auto& p : params) add(p.name, "parameter", p.value);
    for (std::size_t i = 0; i < bn.size(); ++i) {
        add(bn_names[i], "bn_running_mean", bn[i].running_mean);
        add(bn_names[i], "bn_running_var", bn[i].running_var);
    }
}

template <typename T>
void restore(const Checkpoint& ckpt, std::vector<Parameter<T>>& params, const std::vector<std::string>& bn_names,
             std::vector<BatchNormState<T>>& bn)
{
    auto load = [&](const std::string& name, const char* role, Tensor<T>& t) {
        const auto* r = ckpt.find(name, role);
        if (!r) throw FormatError("checkpoint: no " + std::string(role) + " '" + name + "'");
        if (r->shape != t.shape())
            throw FormatError("checkpoint: " + std::string(role) + " '" + name + "' has shape " + to_string(r->shape) +
                              ", network expects " + to_string(t.shape()));
        auto d = t.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(r->values[i]);
    };
    for (auto& p : params) load(p.name, "parameter", p.value);
    for (std::size_t i = 0; i < bn.size(); ++i) {
        load(bn_names[i], "bn_running_mean", bn[i].running_mean);
        load(bn_names[i], "bn_running_var", bn[i].running_var);
    }
}

template <typename T>
void capture_optimizer(Checkpoint& ckpt, const Optimizer<T>& opt)
{
    json slots = json::object();
    for (const auto& [name, slot] : opt.state()) {
        slots[name] = {{"step", slot.step}, {"buffers", slot.buffers.size()}};
        for (std::size_t i = 0; i < slot.buffers.size(); ++i) {
            TensorRecord r{slot_name(name, i), "optimizer", slot.buffers[i].shape(), {}};
            r.values.assign(slot.buffers[i].data().begin(), slot.buffers[i].data().end());
            ckpt.tensors.push_back(std::move(r));
        }
    }
    ckpt.optimizer = {{"config", to_json(opt.config())}, {"slots", slots}};
}

template <typename T>
OptimizerState<T> restore_optimizer_state(const Checkpoint& ckpt)
{
    OptimizerState<T> state;
    if (ckpt.optimizer.is_null()) return state;
    try {
        for (const auto& [name, s] : ckpt.optimizer.at("slots").items()) {
            OptimizerSlot<T> slot;
            slot.step = s.at("step").template get<std::uint64_t>();
            const auto n = s.at("buffers").template get<std::size_t>();
            for (std::size_t i = 0; i < n; ++i) {
                const auto* r = ckpt.find(slot_name(name, i), "optimizer");
                if (!r) throw FormatError("checkpoint: optimizer buffer '" + slot_name(name, i) + "' missing");
                Tensor<T> t(r->shape);
                auto d = t.data();
                for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<T>(r->values[k]);
                slot.buffers.push_back(std::move(t));
            }
            state.emplace(name, std::move(slot));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed optimizer state: ") + e.what());
    }
    return state;
}

#define AUXQ_INSTANTIATE(T)                                                                                         \
    template void capture(Checkpoint&, const std::vector<Parameter<T>>&, const std::vector<std::string>&,          \
                          const std::vector<BatchNormState<T>>&);                                                   \
    template void restore(const Checkpoint&, std::vector<Parameter<T>>&, const std::vector<std::string>&,          \
                          std::vector<BatchNormState<T>>&);                                                         \
    template void capture_optimizer<T>(Checkpoint&, const Optimizer<T>&);                                            \
    template OptimizerState<T> restore_optimizer_state<T>(const Checkpoint&);

AUXQ_INSTANTIATE(float)
AUXQ_INSTANTIATE(double)

#undef AUXQ_INSTANTIATE

}  // namespace auxq
