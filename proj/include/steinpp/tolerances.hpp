#pragma once

namespace steinpp {

/// All numeric tolerances in one place. Values are absolute unless noted.
struct Tolerances {
    /// circumsphere equidistance: |dist(c,x_i) - radius| <= equidist * max(1, radius)
    double equidist = 1e-12;
    /// barycentric coordinates must exceed this for the interior flag
    double interior = 1e-10;
    /// Gram pivot ratio beyond which a tuple counts as degenerate
    double degenerate_cond = 1e12;
    /// relative tolerance for adaptive quadrature (ball_measure, dtv)
    double quad_rel = 1e-6;
    /// absolute quadrature floor: convergence accepts |I2 - I1| below this,
    /// so integrals of round-off noise (near-identical densities) terminate
    double quad_abs = 1e-14;
    /// relative tolerance when verifying a declared total mass
    double total_mass_rel = 1e-4;
    /// absolute bisection tolerance in r for radius_for_mass
    double bisect_abs = 1e-12;
    /// |total_mass - 1| below this counts as a probability measure
    double prob_mass = 1e-9;
    /// relative margin for open-ball membership (emptiness tests):
    /// a point counts as inside B_r(c) iff dist < r - open_ball * max(1, r)
    double open_ball = 1e-9;
    /// L-infinity half-width of the torus lifting chart
    double lift_window = 0.25;
    /// proposal budget for rejection samplers before SamplerStuck
    unsigned long long sampler_budget = 1000000000ULL;
    /// function-evaluation budget for adaptive quadrature
    unsigned long long quad_budget = 1ULL << 26;
};

inline const Tolerances& default_tolerances() {
    static const Tolerances tol{};
    return tol;
}

} // namespace steinpp
