#pragma once

#include <cstdint>
#include <random>

namespace steinpp {

/// Identifies one reproducible random stream. Identical (seed, stream)
/// pairs always produce bit-identical draws; replicate r of an experiment
/// uses stream r, so results do not depend on thread scheduling.
struct RngSpec {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}
} // namespace detail

using Rng = std::mt19937_64;

inline Rng make_engine(const RngSpec& spec) {
    std::uint64_t s = detail::splitmix64(spec.seed);
    s ^= detail::splitmix64(spec.stream ^ 0xD1B54A32D192ED03ULL);
    return Rng(detail::splitmix64(s));
}

inline double runif(Rng& g) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(g);
}

inline double rexp(Rng& g, double rate = 1.0) {
    return std::exponential_distribution<double>(rate)(g);
}

inline long long rpois(Rng& g, double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<long long>(mean)(g);
}

inline long long rbinom(Rng& g, long long n, double p) {
    if (n <= 0 || p <= 0.0) return 0;
    if (p >= 1.0) return n;
    return std::binomial_distribution<long long>(n, p)(g);
}

} // namespace steinpp
