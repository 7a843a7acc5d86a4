#pragma once

// Versioned checkpoint container. Byte layout (all integers little-endian):
//
//   0   8 bytes   magic "AUXQCKPT"
//   8   u32       format version (1)
//   12  u64       header length H
//   20  H bytes   UTF-8 JSON header
//       zero padding up to the next multiple of 8
//       payload: raw IEEE-754 little-endian tensors, dtype from the header,
//       each at header.tensors[i].offset bytes from the payload start
//
// docs/checkpoint-format.md describes the header fields.

#include "auxq/auxiliary.hpp"
#include "auxq/config.hpp"
#include "auxq/optim.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>

namespace auxq {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
    std::string name;
    std::string role;  // parameter, bn_running_mean, bn_running_var, optimizer
    Shape shape;
    std::vector<double> values;  // exact for both dtypes
};

struct Checkpoint {
    Precision dtype = Precision::F64;
    NetworkSpec network;
    std::optional<AuxiliarySpec> auxiliary;
    std::vector<TensorRecord> tensors;
    nlohmann::json optimizer = nullptr;  // config and per-slot step counts
    std::map<std::string, std::string> rng;  // stream name -> engine state text
    std::size_t epoch = 0;  // completed epochs
    std::size_t step = 0;   // completed steps
    nlohmann::json extra = nlohmann::json::object();  // training config, normalization, method

    const TensorRecord* find(std::string_view name, std::string_view role) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

// Parameters and BN running statistics.
template <typename T>
void capture(Checkpoint& ckpt, const std::vector<Parameter<T>>& params, const std::vector<std::string>& bn_names,
             const std::vector<BatchNormState<T>>& bn);
// Throws FormatError if any name is missing or a shape differs.
template <typename T>
void restore(const Checkpoint& ckpt, std::vector<Parameter<T>>& params, const std::vector<std::string>& bn_names,
             std::vector<BatchNormState<T>>& bn);

template <typename T>
void capture_network(Checkpoint& ckpt, const Network<T>& net)
{
    capture(ckpt, net.parameters(), net.batchnorm_names(), net.batchnorm_states());
}

template <typename T>
void restore_network(const Checkpoint& ckpt, Network<T>& net)
{
    restore(ckpt, net.parameters(), net.batchnorm_names(), net.batchnorm_states());
}

// Fresh network from the checkpoint's spec with its parameters loaded.
template <typename T>
Network<T> network_from_checkpoint(const Checkpoint& ckpt)
{
    Network<T> net(ckpt.network, 0);
    restore_network(ckpt, net);
    return net;
}

template <typename T>
void capture_optimizer(Checkpoint& ckpt, const Optimizer<T>& opt);
template <typename T>
OptimizerState<T> restore_optimizer_state(const Checkpoint& ckpt);

}  // namespace auxq
