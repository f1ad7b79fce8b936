#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace fam {

// splitmix64 finalizer; basis for deterministic seed derivation.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

inline std::uint64_t seed_combine(std::uint64_t a, std::string_view tag) { return seed_combine(a, fnv1a64(tag)); }

template <typename T, typename U, typename... Rest>
std::uint64_t seed_combine(std::uint64_t a, T b, U c, Rest... rest) {
    return seed_combine(seed_combine(a, b), c, rest...);
}

// Uniform in [0,1) from the top 53 bits. The generator's output sequence is
// pinned by the standard, so draws are identical across platforms.
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(rng);
}

// Box-Muller; avoids std::normal_distribution, whose output sequence is
// implementation-defined.
inline double gaussian(std::mt19937_64& rng) {
    double u1;
    do {
        u1 = uniform_unit(rng);
    } while (u1 == 0.0);
    const double u2 = uniform_unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Uniform integer in [0, n); rejection sampling, no modulo bias.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = ~0ull - (~0ull % n);
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

}  // namespace fam
