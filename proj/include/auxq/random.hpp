#pragma once

#include "auxq/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace auxq {

// All randomness derives from one run seed through named streams ("init",
// "aux_init", "shuffle", "augment", ...), so consuming one stream never
// shifts another.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view purpose);
std::mt19937_64 make_stream(std::uint64_t seed, std::string_view purpose);

// Portable draws (the std distributions are implementation-defined).
double uniform01(std::mt19937_64& rng);
double standard_normal(std::mt19937_64& rng);
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);

// N(0, 2 / fan_in) fill.
template <typename T>
void he_normal(Tensor<T>& t, std::size_t fan_in, std::mt19937_64& rng)
{
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<T>(sd * standard_normal(rng));
}

}  // namespace auxq
