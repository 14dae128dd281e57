#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "steinpp/errors.hpp"

namespace steinpp {

/// Pairwise (cascade) summation; deterministic for a fixed element order.
inline double pairwise_sum(std::span<const double> v) {
    const std::size_t n = v.size();
    if (n == 0) return 0.0;
    if (n <= 16) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t h = n / 2;
    return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

struct Summary {
    std::size_t n = 0;
    double mean = 0.0;
    double var = 0.0; // unbiased sample variance
    double se = 0.0;  // standard error of the mean
};

/// Mean/variance/SE of one value per replicate, reduced in index order.
inline Summary summarize(std::span<const double> v) {
    Summary s;
    s.n = v.size();
    if (s.n == 0) return s;
    s.mean = pairwise_sum(v) / static_cast<double>(s.n);
    if (s.n == 1) return s;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - s.mean;
        sq[i] = d * d;
    }
    s.var = pairwise_sum(sq) / static_cast<double>(s.n - 1);
    s.se = std::sqrt(s.var / static_cast<double>(s.n));
    return s;
}

/// z-score of the difference of two independent estimates.
inline double z_score(const Summary& a, const Summary& b) {
    const double d = a.mean - b.mean;
    const double se = std::sqrt(a.se * a.se + b.se * b.se);
    if (se == 0.0) return d == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return d / se;
}

inline double log_factorial(unsigned k) { return std::lgamma(static_cast<double>(k) + 1.0); }

inline double poisson_pmf(unsigned k, double mean) {
    if (mean <= 0.0) return k == 0 ? 1.0 : 0.0;
    return std::exp(static_cast<double>(k) * std::log(mean) - mean - log_factorial(k));
}

/// P(Poisson(mean) <= k)
inline double poisson_cdf(unsigned k, double mean) {
    double s = 0.0;
    for (unsigned i = 0; i <= k; ++i) s += poisson_pmf(i, mean);
    return s < 1.0 ? s : 1.0;
}

inline double binomial_pmf(unsigned k, unsigned n, double p) {
    if (k > n) return 0.0;
    if (p <= 0.0) return k == 0 ? 1.0 : 0.0;
    if (p >= 1.0) return k == n ? 1.0 : 0.0;
    const double lg = log_factorial(n) - log_factorial(k) - log_factorial(n - k);
    return std::exp(lg + static_cast<double>(k) * std::log(p) +
                    static_cast<double>(n - k) * std::log1p(-p));
}

/// P(Binomial(n, p) <= k)
inline double binomial_cdf(unsigned k, unsigned n, double p) {
    double s = 0.0;
    for (unsigned i = 0; i <= k && i <= n; ++i) s += binomial_pmf(i, n, p);
    return s < 1.0 ? s : 1.0;
}

} // namespace steinpp
