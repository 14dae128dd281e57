#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "steinpp/errors.hpp"
#include "steinpp/tolerances.hpp"

namespace steinpp {

/// A point of the unit torus; every coordinate lies in [0, 1).
using TorusPoint = std::vector<double>;

/// Canonical representative of x mod 1 in [0, 1).
inline double wrap_unit(double x) {
    double y = x - std::floor(x);
    return y < 1.0 ? y : 0.0;
}

/// Minimal signed displacement from `from` to `to` on the circle, in [-0.5, 0.5).
inline double min_displacement(double from, double to) {
    double d = to - from;
    d -= std::floor(d);
    if (d >= 0.5) d -= 1.0;
    return d;
}

inline double torus_dist2(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = std::abs(a[i] - b[i]);
        if (d > 0.5) d = 1.0 - d;
        s += d * d;
    }
    return s;
}

inline double torus_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionMismatch("torus_distance: points of different dimension");
    return std::sqrt(torus_dist2(a, b));
}

/// Lift every tuple point into the Euclidean chart centred at `anchor`.
/// Requires each point within L-infinity distance `lift_window` of the anchor.
inline std::vector<std::vector<double>> torus_lift(const std::vector<TorusPoint>& tuple,
                                                   const TorusPoint& anchor,
                                                   const Tolerances& tol = default_tolerances()) {
    std::vector<std::vector<double>> out;
    out.reserve(tuple.size());
    for (const auto& p : tuple) {
        if (p.size() != anchor.size())
            throw DimensionMismatch("torus_lift: point/anchor dimension mismatch");
        std::vector<double> q(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = min_displacement(anchor[i], p[i]);
            if (std::abs(d) > tol.lift_window)
                throw LiftAmbiguous("torus_lift: point outside the lifting window");
            q[i] = anchor[i] + d;
        }
        out.push_back(std::move(q));
    }
    return out;
}

/// Volume of the d-dimensional unit ball.
inline double unit_ball_volume(int d) {
    return std::pow(M_PI, d / 2.0) / std::tgamma(d / 2.0 + 1.0);
}

/// Lebesgue volume of a radius-r ball embedded in the unit torus (needs 2r < 1).
inline double ball_volume(int d, double r) {
    if (d < 1) throw DimensionMismatch("ball_volume: dimension must be positive");
    if (r < 0.0) throw Error("ball_volume: negative radius");
    if (r == 0.0) return 0.0;
    if (2.0 * r >= 1.0) throw BallTooLarge("ball_volume: 2r >= 1, ball does not embed");
    return unit_ball_volume(d) * std::pow(r, d);
}

struct Circumsphere {
    TorusPoint center;  // canonical torus coordinates
    double radius = 0.0; // < 1/4 so the circumball embeds
    bool interior = false; // circumcenter strictly inside the tuple's convex hull
};

/// Circumsphere of m points (2 <= m <= d+1): the unique (m-2)-sphere through
/// them inside their affine hull. Returns nullopt for degenerate tuples
/// (repeated points, affinely dependent tuples, or a circumball too large to
/// embed). Throws LiftAmbiguous if the tuple does not fit the lifting window
/// around its first point.
inline std::optional<Circumsphere> circumsphere(const std::vector<TorusPoint>& tuple,
                                                const Tolerances& tol = default_tolerances()) {
    const std::size_t m = tuple.size();
    if (m < 2) throw ArityUnsupported("circumsphere: need at least two points");
    const std::size_t d = tuple[0].size();
    if (m > d + 1)
        throw DimensionMismatch("circumsphere: more than d+1 points");

    const auto lifted = torus_lift(tuple, tuple[0], tol);
    const std::size_t q = m - 1;

    // v_i = x_{i+1} - x_1; solve (v_i . v_j) beta = |v_i|^2 / 2.
    std::vector<std::vector<double>> v(q, std::vector<double>(d));
    for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < d; ++j) v[i][j] = lifted[i + 1][j] - lifted[0][j];

    std::vector<std::vector<double>> G(q, std::vector<double>(q + 1));
    double scale = 0.0;
    for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += v[i][c] * v[j][c];
            G[i][j] = s;
            scale = std::max(scale, std::abs(s));
        }
        G[i][q] = G[i][i] / 2.0;
    }
    if (scale == 0.0) return std::nullopt; // all points coincide

    // Gaussian elimination with partial pivoting; a pivot collapsing by more
    // than degenerate_cond relative to the matrix scale marks degeneracy.
    std::vector<std::size_t> rows(q);
    for (std::size_t i = 0; i < q; ++i) rows[i] = i;
    for (std::size_t col = 0; col < q; ++col) {
        std::size_t best = col;
        for (std::size_t r = col + 1; r < q; ++r)
            if (std::abs(G[rows[r]][col]) > std::abs(G[rows[best]][col])) best = r;
        std::swap(rows[col], rows[best]);
        const double pivot = G[rows[col]][col];
        if (std::abs(pivot) * tol.degenerate_cond < scale) return std::nullopt;
        for (std::size_t r = col + 1; r < q; ++r) {
            const double f = G[rows[r]][col] / pivot;
            for (std::size_t c = col; c <= q; ++c) G[rows[r]][c] -= f * G[rows[col]][c];
        }
    }
    std::vector<double> beta(q);
    for (std::size_t col = q; col-- > 0;) {
        double s = G[rows[col]][q];
        for (std::size_t c = col + 1; c < q; ++c) s -= G[rows[col]][c] * beta[c];
        beta[col] = s / G[rows[col]][col];
    }

    std::vector<double> center(d);
    for (std::size_t c = 0; c < d; ++c) {
        double s = lifted[0][c];
        for (std::size_t i = 0; i < q; ++i) s += beta[i] * v[i][c];
        center[c] = s;
    }
    double r2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        const double dd = center[c] - lifted[0][c];
        r2 += dd * dd;
    }
    const double radius = std::sqrt(r2);
    if (radius >= tol.lift_window) return std::nullopt; // circumball cannot embed

    // enforce equidistance within tolerance
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dd = center[c] - lifted[i][c];
            s += dd * dd;
        }
        if (std::abs(std::sqrt(s) - radius) > tol.equidist * std::max(1.0, radius))
            return std::nullopt;
    }

    Circumsphere out;
    out.radius = radius;
    out.center.resize(d);
    for (std::size_t c = 0; c < d; ++c) out.center[c] = wrap_unit(center[c]);
    double alpha0 = 1.0;
    bool interior = true;
    for (std::size_t i = 0; i < q; ++i) {
        alpha0 -= beta[i];
        if (beta[i] <= tol.interior) interior = false;
    }
    if (alpha0 <= tol.interior) interior = false;
    out.interior = interior;
    return out;
}

} // namespace steinpp
