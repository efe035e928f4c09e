#pragma once

#include <cstdint>
#include <random>

namespace bex {

// std::mt19937_64 output is fixed by the standard, the distributions are not.
// These helpers draw from the raw engine so seeded runs (and golden files)
// match across standard library implementations.
using Rng = std::mt19937_64;

inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = Rng::max() - (Rng::max() % n);
    for (;;) {
        const std::uint64_t x = rng();
        if (x < limit) return x % n;
    }
}

inline double uniform_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Mixes a base seed with a stream id so independent sub-streams derived from
// one seed do not overlap.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace bex
