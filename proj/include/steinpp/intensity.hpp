#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "steinpp/geometry.hpp"

namespace steinpp {

namespace detail {

/// Midpoint rule on a product of intervals, refined by halving every axis
/// until two successive levels agree to rel_tol. Deterministic evaluation
/// order; throws QuadratureNotConverged when the evaluation budget runs out.
template <class F>
double tensor_midpoint(std::span<const double> lo, std::span<const double> hi, F&& f,
                       double rel_tol, unsigned long long budget) {
    const std::size_t na = lo.size();
    double prev = 0.0;
    bool have_prev = false;
    unsigned long long used = 0;
    for (int level = 0;; ++level) {
        const long long per = 4LL << level;
        double cells = 1.0;
        for (std::size_t a = 0; a < na; ++a) cells *= static_cast<double>(per);
        if (cells > 1e18 || used + static_cast<unsigned long long>(cells) > budget)
            throw QuadratureNotConverged("tensor_midpoint: budget exceeded");
        used += static_cast<unsigned long long>(cells);

        std::vector<double> h(na), base(na);
        double vol = 1.0;
        for (std::size_t a = 0; a < na; ++a) {
            h[a] = (hi[a] - lo[a]) / static_cast<double>(per);
            base[a] = lo[a] + 0.5 * h[a];
            vol *= h[a];
        }
        std::vector<long long> idx(na, 0);
        std::vector<double> x(na);
        double sum = 0.0;
        for (;;) {
            for (std::size_t a = 0; a < na; ++a) x[a] = base[a] + h[a] * static_cast<double>(idx[a]);
            sum += f(std::span<const double>(x));
            std::size_t a = 0;
            while (a < na && ++idx[a] == per) idx[a++] = 0;
            if (a == na) break;
        }
        const double I = sum * vol;
        if (have_prev &&
            std::abs(I - prev) <= rel_tol * std::max({std::abs(I), std::abs(prev), 1e-300}))
            return I;
        prev = I;
        have_prev = true;
    }
}

} // namespace detail

/// Intensity measure on the unit torus given by a bounded density.
class IntensityMeasure {
  public:
    enum class Kind { constant, separable_product, general };

    static IntensityMeasure constant(int d, double lambda) {
        if (d < 1) throw DimensionMismatch("IntensityMeasure: dimension must be positive");
        if (lambda < 0.0) throw ConfigError("IntensityMeasure: density must be nonnegative");
        IntensityMeasure m;
        m.kind_ = Kind::constant;
        m.d_ = d;
        m.lo_ = m.hi_ = lambda;
        m.total_ = lambda;
        return m;
    }

    /// density(x) = prod_i f_i(x_i); per-factor bounds are declared.
    static IntensityMeasure separable(std::vector<std::function<double(double)>> factors,
                                      std::vector<double> factor_lo, std::vector<double> factor_hi,
                                      const Tolerances& tol = default_tolerances()) {
        if (factors.empty() || factors.size() != factor_lo.size() ||
            factors.size() != factor_hi.size())
            throw ConfigError("IntensityMeasure: factor/bound count mismatch");
        IntensityMeasure m;
        m.kind_ = Kind::separable_product;
        m.d_ = static_cast<int>(factors.size());
        m.factors_ = std::move(factors);
        m.lo_ = 1.0;
        m.hi_ = 1.0;
        m.total_ = 1.0;
        for (std::size_t i = 0; i < m.factors_.size(); ++i) {
            if (factor_lo[i] <= 0.0 || factor_hi[i] < factor_lo[i])
                throw ConfigError("IntensityMeasure: invalid factor bounds");
            m.lo_ *= factor_lo[i];
            m.hi_ *= factor_hi[i];
            const auto& f = m.factors_[i];
            const double lo = 0.0, hi = 1.0;
            m.total_ *= detail::tensor_midpoint(
                std::span<const double>(&lo, 1), std::span<const double>(&hi, 1),
                [&](std::span<const double> z) { return f(z[0]); }, tol.quad_rel, tol.quad_budget);
        }
        return m;
    }

    static IntensityMeasure general(int d, std::function<double(std::span<const double>)> density,
                                    double lambda_lo, double lambda_hi,
                                    std::optional<double> declared_total = std::nullopt,
                                    const Tolerances& tol = default_tolerances()) {
        if (d < 1) throw DimensionMismatch("IntensityMeasure: dimension must be positive");
        if (lambda_lo <= 0.0 || lambda_hi < lambda_lo)
            throw ConfigError("IntensityMeasure: invalid density bounds");
        IntensityMeasure m;
        m.kind_ = Kind::general;
        m.d_ = d;
        m.dens_ = std::move(density);
        m.lo_ = lambda_lo;
        m.hi_ = lambda_hi;
        const std::vector<double> lo(d, 0.0), hi(d, 1.0);
        m.total_ = detail::tensor_midpoint(
            std::span<const double>(lo), std::span<const double>(hi),
            [&](std::span<const double> x) { return m.dens_(x); }, tol.total_mass_rel,
            tol.quad_budget);
        if (declared_total) {
            if (std::abs(m.total_ - *declared_total) >
                tol.total_mass_rel * std::max(1.0, std::abs(*declared_total)))
                throw ConfigError("IntensityMeasure: declared total mass fails verification");
            m.total_ = *declared_total;
        }
        return m;
    }

    int dim() const { return d_; }
    Kind kind() const { return kind_; }
    double total_mass() const { return total_; }
    double lambda_min() const { return scale_ * lo_; }
    double lambda_max() const { return scale_ * hi_; }
    bool is_constant() const { return kind_ == Kind::constant; }

    double density(std::span<const double> x) const {
        switch (kind_) {
        case Kind::constant:
            return scale_ * lo_;
        case Kind::separable_product: {
            double p = scale_;
            for (std::size_t i = 0; i < factors_.size(); ++i) p *= factors_[i](x[i]);
            return p;
        }
        case Kind::general:
            return scale_ * dens_(x);
        }
        return 0.0;
    }

    /// Same measure multiplied by c > 0.
    IntensityMeasure scaled(double c) const {
        if (c <= 0.0) throw ConfigError("IntensityMeasure::scaled: factor must be positive");
        IntensityMeasure m = *this;
        m.scale_ *= c;
        m.total_ *= c;
        return m;
    }

  private:
    IntensityMeasure() = default;
    Kind kind_ = Kind::constant;
    int d_ = 1;
    double lo_ = 1.0, hi_ = 1.0;   // density bounds before scaling
    double total_ = 1.0;           // total mass including scaling
    double scale_ = 1.0;
    std::function<double(std::span<const double>)> dens_;
    std::vector<std::function<double(double)>> factors_;
};

/// K(B_r(x)). Constant densities use the closed form; otherwise the ball is
/// integrated in spherical coordinates about x (smooth in the radial and
/// angular variables for bounded densities) by adaptive tensor midpoint.
inline double ball_measure(const IntensityMeasure& K, std::span<const double> x, double r,
                           const Tolerances& tol = default_tolerances()) {
    const int d = K.dim();
    if (static_cast<int>(x.size()) != d)
        throw DimensionMismatch("ball_measure: point dimension mismatch");
    if (r < 0.0) throw Error("ball_measure: negative radius");
    if (r == 0.0) return 0.0;
    if (2.0 * r >= 1.0) throw BallTooLarge("ball_measure: 2r >= 1, ball does not embed");
    if (K.is_constant()) return K.density(x) * ball_volume(d, r);

    if (d == 1) {
        const double lo = -r, hi = r;
        double p = 0.0;
        return detail::tensor_midpoint(
            std::span<const double>(&lo, 1), std::span<const double>(&hi, 1),
            [&](std::span<const double> t) {
                p = wrap_unit(x[0] + t[0]);
                return K.density(std::span<const double>(&p, 1));
            },
            tol.quad_rel, tol.quad_budget);
    }

    // axes: radius s in [0,r], angles phi_1..phi_{d-2} in [0,pi], phi_{d-1} in [0,2pi]
    std::vector<double> lo(d, 0.0), hi(d);
    hi[0] = r;
    for (int a = 1; a < d - 1; ++a) hi[a] = M_PI;
    hi[d - 1] = 2.0 * M_PI;
    std::vector<double> pt(d);
    return detail::tensor_midpoint(
        std::span<const double>(lo), std::span<const double>(hi),
        [&](std::span<const double> u) {
            const double s = u[0];
            double jac = std::pow(s, d - 1);
            double sines = 1.0;
            for (int a = 0; a < d - 1; ++a) {
                const double phi = u[a + 1];
                pt[a] = wrap_unit(x[a] + s * sines * std::cos(phi));
                if (a < d - 2) jac *= std::pow(std::sin(phi), d - 2 - a);
                sines *= std::sin(phi);
            }
            pt[d - 1] = wrap_unit(x[d - 1] + s * sines);
            return jac * K.density(std::span<const double>(pt));
        },
        tol.quad_rel, tol.quad_budget);
}

/// K(box) for an axis-aligned box inside [0,1]^d.
inline double box_mass(const IntensityMeasure& K, const std::vector<double>& lo,
                       const std::vector<double>& hi,
                       const Tolerances& tol = default_tolerances()) {
    if (static_cast<int>(lo.size()) != K.dim() || lo.size() != hi.size())
        throw DimensionMismatch("box_mass: box dimension mismatch");
    double vol = 1.0;
    for (std::size_t i = 0; i < lo.size(); ++i) {
        if (hi[i] < lo[i]) throw ConfigError("box_mass: empty box");
        vol *= hi[i] - lo[i];
    }
    if (vol == 0.0) return 0.0;
    if (K.is_constant()) {
        const std::vector<double> x(lo.size(), 0.0);
        return K.density(x) * vol;
    }
    std::vector<double> w(lo.size());
    return detail::tensor_midpoint(
        std::span<const double>(lo), std::span<const double>(hi),
        [&](std::span<const double> x) {
            for (std::size_t i = 0; i < x.size(); ++i) w[i] = wrap_unit(x[i]);
            return K.density(std::span<const double>(w));
        },
        tol.quad_rel, tol.quad_budget);
}

/// Smallest r with scale * K(B_r(x)) >= target. Bisection to bisect_abs;
/// constant densities invert the closed form directly.
inline double radius_for_mass(const IntensityMeasure& K, std::span<const double> x, double target,
                              double scale = 1.0, const Tolerances& tol = default_tolerances()) {
    if (target <= 0.0) return 0.0;
    const double r_max = 0.5 * (1.0 - 1e-12);
    if (K.is_constant()) {
        const double lam = K.density(x);
        const double r =
            std::pow(target / (scale * lam * unit_ball_volume(K.dim())), 1.0 / K.dim());
        if (r > r_max) throw TargetUnreachable("radius_for_mass: target exceeds largest ball");
        return r;
    }
    if (scale * ball_measure(K, x, r_max, tol) < target)
        throw TargetUnreachable("radius_for_mass: target exceeds largest ball");
    double lo = 0.0, hi = r_max;
    while (hi - lo > tol.bisect_abs) {
        const double mid = 0.5 * (lo + hi);
        (scale * ball_measure(K, x, mid, tol) >= target ? hi : lo) = mid;
    }
    return hi;
}

} // namespace steinpp
