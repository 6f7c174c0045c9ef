#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pglmm {

using Rng = std::mt19937_64;

/// FNV-1a hash, used to key per-group RNG streams by group label so that
/// sampling is invariant to the order in which group levels are listed.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/// Derive an independent stream from (master seed, epoch, key).
/// Epoch is a monotone counter (one per E-step), key identifies the unit
/// of parallelism (group label hash, replicate index, ...).
inline Rng make_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t key) {
    std::seed_seq seq{
        static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
        static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
        static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
    return Rng(seq);
}

inline double runif(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double rnorm(Rng& rng) {
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

} // namespace pglmm
