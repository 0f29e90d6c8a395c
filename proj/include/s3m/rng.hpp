#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace s3m {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based sub-seed: hashes the master seed together with a path of
/// counters (repetition, stream tag, episode, ...). Streams derived from
/// distinct paths are independent of execution order.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = splitmix64(master);
    for (std::uint64_t c : path) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
    return h;
}

/// Uniform double in [0, 1) built from the top 53 bits, identical across
/// standard libraries (unlike std::uniform_real_distribution).
template <class Urbg>
double uniform01(Urbg& g) {
    static_assert(Urbg::max() == ~std::uint64_t{0} && Urbg::min() == 0, "needs a full 64-bit generator");
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n) by rejection sampling.
template <class Urbg>
std::uint64_t uniform_index(Urbg& g, std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do x = g();
    while (x >= limit);
    return x % n;
}

/// Index drawn from an (unnormalised, non-negative) weight vector.
template <class Urbg, class Weights>
std::size_t sample_index(Urbg& g, const Weights& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform01(g) * total;
    std::size_t last = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        last = i;
        if (u < weights[i]) return i;
        u -= weights[i];
    }
    return last;
}

} // namespace s3m
