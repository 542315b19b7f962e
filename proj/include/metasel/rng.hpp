#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace metasel {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Mixes a base seed with stream identifiers into an independent child seed,
/// so per-item randomness does not depend on processing order.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> streams) {
    std::uint64_t s = splitmix64(base);
    for (auto v : streams) s = splitmix64(s ^ splitmix64(v + 0x632BE59BD9B4E019ULL));
    return s;
}

}  // namespace metasel
