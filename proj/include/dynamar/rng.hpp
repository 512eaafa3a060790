#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dynamar {

// All randomness goes through these helpers instead of <random> distributions,
// whose output is implementation-defined. Same seed, same draw sequence, on
// any platform.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derive an independent stream seed from a base seed and a label.
inline std::uint64_t mix_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(base ^ h);
}

/// Uniform integer in [0, n). n must be positive.
inline std::uint64_t rand_below(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % n;
}

/// Uniform double in [0, 1).
inline double rand_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller (no cached spare, so the draw count per
/// call is fixed).
inline double rand_normal(Rng& rng) {
    double u1 = rand_unit(rng);
    while (u1 <= 0.0) u1 = rand_unit(rng);
    const double u2 = rand_unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double rand_normal(Rng& rng, double mean, double stddev) {
    return mean + stddev * rand_normal(rng);
}

/// Fisher-Yates shuffle driven by rand_below.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rand_below(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace dynamar
