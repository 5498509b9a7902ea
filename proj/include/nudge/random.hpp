#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace nudge {

using Rng = std::mt19937_64;

/// Mixes a base seed with stream coordinates (sample id, member index, ...)
/// into an independent seed. Used to give every worker its own stream so
/// results do not depend on scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t h = mix(seed);
    for (auto s : stream) h = mix(h ^ mix(s));
    return h;
}

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double stddev = 1.0) {
    return std::normal_distribution<double>(0.0, stddev)(rng);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

} // namespace nudge
