#pragma once

// Spatial birth-death dynamics on the unit torus whose stationary law is the
// Poisson process with a given intensity measure.  The chain adds points at
// total rate M(X) (locations drawn from the normalized intensity) and removes
// each existing point independently at rate 1.  Simulation is event-driven
// and exact: waiting times are exponential in the current total rate, so no
// time discretization error enters.
//
//   * simulate          - run one chain from a fixed initial configuration.
//   * simulate_coupled  - run two chains that share birth events and the
//                         death clocks of points common to both; only the
//                         initial discrepancy evolves independently, so the
//                         symmetric difference can never grow and shrinks in
//                         expectation by a factor exp(-t).
//   * stationarity_report - empirical check that the chain started from the
//                         empty configuration reaches the expected Poisson
//                         count law and spreads mass evenly across a fixed
//                         spatial partition.
//
// Replicated runs use one RNG stream per trajectory, so results do not
// depend on the number of worker threads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "steinpp/discrepancy.hpp"
#include "steinpp/errors.hpp"
#include "steinpp/intensity.hpp"
#include "steinpp/parallel.hpp"
#include "steinpp/pointproc.hpp"
#include "steinpp/rng.hpp"
#include "steinpp/tolerances.hpp"

namespace steinpp {

namespace detail {

// Mutable particle state kept as a flat coordinate buffer so deaths can
// remove an arbitrary particle in O(d) (overwrite with the last one).
class ParticleBuffer {
public:
    explicit ParticleBuffer(int dim) : dim_(static_cast<std::size_t>(dim)) {}

    std::size_t size() const { return coords_.size() / dim_; }

    void push(std::span<const double> p) { coords_.insert(coords_.end(), p.begin(), p.end()); }

    void kill(std::size_t idx) {
        const std::size_t last = size() - 1;
        if (idx != last)
            std::copy_n(coords_.begin() + static_cast<std::ptrdiff_t>(last * dim_), dim_,
                        coords_.begin() + static_cast<std::ptrdiff_t>(idx * dim_));
        coords_.resize(last * dim_);
    }

    std::span<const double> point(std::size_t idx) const {
        return {coords_.data() + idx * dim_, dim_};
    }

    void append_to(PointConfiguration& out) const {
        for (std::size_t i = 0; i < size(); ++i) out.push_back(point(i));
    }

private:
    std::size_t dim_;
    std::vector<double> coords_;
};

// Draw one birth location from M / M(X) and append it to the buffer.
inline void birth_into(ParticleBuffer& buf, PointConfiguration& scratch,
                       const IntensityMeasure& M, Rng& eng, const Tolerances& tol) {
    append_point_from(scratch, M, eng, tol);
    buf.push(scratch.point(scratch.size() - 1));
    scratch.pop_back();
}

// Uniform index in {0, ..., count-1}; the clamp guards against the rare
// rounding of runif * count up to count.
inline std::size_t uniform_index(Rng& eng, std::size_t count) {
    const auto idx = static_cast<std::size_t>(runif(eng) * static_cast<double>(count));
    return std::min(idx, count - 1);
}

} // namespace detail

/// Run the birth-death chain from `w0` for `horizon` units of time and
/// return the terminal configuration.  A zero horizon returns the initial
/// configuration unchanged and consumes no randomness.
inline PointConfiguration simulate(const PointConfiguration& w0, const IntensityMeasure& M,
                                   double horizon, Rng& eng,
                                   const Tolerances& tol = default_tolerances()) {
    if (!(horizon >= 0.0))
        throw ConfigError("simulate: horizon must be nonnegative, got " + std::to_string(horizon));
    if (w0.dim() != M.dim())
        throw DimensionMismatch("simulate: configuration dimension " + std::to_string(w0.dim()) +
                                " does not match intensity dimension " + std::to_string(M.dim()));
    if (horizon == 0.0) return w0;

    const double birth = M.total_mass();
    detail::ParticleBuffer buf(w0.dim());
    for (std::size_t i = 0; i < w0.size(); ++i) buf.push(w0.point(i));
    PointConfiguration scratch(w0.dim());

    double t = 0.0;
    for (;;) {
        const double rate = birth + static_cast<double>(buf.size());
        if (!(rate > 0.0)) break; // nothing can ever happen again
        t += rexp(eng, rate);
        if (t > horizon) break;
        if (runif(eng) * rate < birth)
            detail::birth_into(buf, scratch, M, eng, tol);
        else
            buf.kill(detail::uniform_index(eng, buf.size()));
    }

    PointConfiguration out(w0.dim());
    buf.append_to(out);
    return out;
}

/// Run two birth-death chains from `w1` and `w2` under the monotone
/// coupling: births are shared, points present in both configurations share
/// one death clock, and only the initial discrepancy points carry
/// independent clocks.  Shared particles therefore never disagree, the
/// symmetric difference never grows, and each returned configuration is
/// marginally distributed exactly like a plain `simulate` run.
inline std::pair<PointConfiguration, PointConfiguration> simulate_coupled(
    const PointConfiguration& w1, const PointConfiguration& w2, const IntensityMeasure& M,
    double horizon, Rng& eng, const Tolerances& tol = default_tolerances()) {
    if (!(horizon >= 0.0))
        throw ConfigError("simulate_coupled: horizon must be nonnegative, got " +
                          std::to_string(horizon));
    if (w1.dim() != w2.dim())
        throw DimensionMismatch("simulate_coupled: configurations have different dimensions");
    if (w1.dim() != M.dim())
        throw DimensionMismatch("simulate_coupled: configuration dimension " +
                                std::to_string(w1.dim()) + " does not match intensity dimension " +
                                std::to_string(M.dim()));

    const auto dim = w1.dim();
    // Split the initial points into the common multiset and the two one-sided
    // leftovers (coordinates match bitwise, duplicates pair up one-to-one).
    detail::ParticleBuffer common(dim), only1(dim), only2(dim);
    {
        auto sorted_order = [](const PointConfiguration& w) {
            std::vector<std::size_t> order(w.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return detail::cmp_doubles_bitwise(w.point(a), w.point(b)) < 0;
            });
            return order;
        };
        const std::vector<std::size_t> o1 = sorted_order(w1);
        const std::vector<std::size_t> o2 = sorted_order(w2);
        std::size_t i = 0, j = 0;
        while (i < o1.size() && j < o2.size()) {
            const int c = detail::cmp_doubles_bitwise(w1.point(o1[i]), w2.point(o2[j]));
            if (c == 0) {
                common.push(w1.point(o1[i]));
                ++i;
                ++j;
            } else if (c < 0) {
                only1.push(w1.point(o1[i++]));
            } else {
                only2.push(w2.point(o2[j++]));
            }
        }
        while (i < o1.size()) only1.push(w1.point(o1[i++]));
        while (j < o2.size()) only2.push(w2.point(o2[j++]));
    }

    if (horizon > 0.0) {
        const double birth = M.total_mass();
        PointConfiguration scratch(dim);
        double t = 0.0;
        for (;;) {
            const double nc = static_cast<double>(common.size());
            const double n1 = static_cast<double>(only1.size());
            const double n2 = static_cast<double>(only2.size());
            const double rate = birth + nc + n1 + n2;
            if (!(rate > 0.0)) break;
            t += rexp(eng, rate);
            if (t > horizon) break;
            const double u = runif(eng) * rate;
            if (u < birth)
                detail::birth_into(common, scratch, M, eng, tol); // shared birth
            else if (u < birth + nc)
                common.kill(detail::uniform_index(eng, common.size()));
            else if (u < birth + nc + n1)
                only1.kill(detail::uniform_index(eng, only1.size()));
            else
                only2.kill(detail::uniform_index(eng, only2.size()));
        }
    }

    PointConfiguration out1(dim), out2(dim);
    common.append_to(out1);
    common.append_to(out2);
    only1.append_to(out1);
    only2.append_to(out2);
    return {std::move(out1), std::move(out2)};
}

/// One cell of the stationarity check: an axis-aligned box with its
/// intensity mass, the empirical mean terminal count, and the z-score of
/// that mean against the predicted Poisson cell mean.
struct StationarityCell {
    std::vector<double> lo;
    std::vector<double> hi;
    double mass = 0.0;
    double mean = 0.0;
    double z = 0.0;
};

/// Result of the empirical stationarity check; `pass` combines the exact
/// total-variation test on the terminal count law with the per-cell
/// z-scores over a fixed spatial partition.
struct StationarityReport {
    std::size_t reps = 0;
    double horizon = 0.0;
    double mass = 0.0;        ///< total intensity mass M(X)
    double target_mean = 0.0; ///< predicted terminal count mean M(X)(1 - e^{-horizon})
    double count_tv = 0.0;
    double max_abs_z = 0.0;
    double tv_threshold = 0.02;
    double z_threshold = 4.0;
    bool pass = false;
    std::vector<StationarityCell> cells;

    std::string to_json() const {
        std::string s = "{\"reps\":";
        s += std::to_string(reps);
        s += ",\"horizon\":";
        detail::append_json_num(s, horizon);
        s += ",\"mass\":";
        detail::append_json_num(s, mass);
        s += ",\"target_mean\":";
        detail::append_json_num(s, target_mean);
        s += ",\"count_tv\":";
        detail::append_json_num(s, count_tv);
        s += ",\"max_abs_z\":";
        detail::append_json_num(s, max_abs_z);
        s += ",\"tv_threshold\":";
        detail::append_json_num(s, tv_threshold);
        s += ",\"z_threshold\":";
        detail::append_json_num(s, z_threshold);
        s += ",\"pass\":";
        s += pass ? "true" : "false";
        s += ",\"cells\":[";
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) s += ',';
            s += "{\"lo\":";
            detail::append_json_array(s, cells[i].lo);
            s += ",\"hi\":";
            detail::append_json_array(s, cells[i].hi);
            s += ",\"mass\":";
            detail::append_json_num(s, cells[i].mass);
            s += ",\"mean\":";
            detail::append_json_num(s, cells[i].mean);
            s += ",\"z\":";
            detail::append_json_num(s, cells[i].z);
            s += '}';
        }
        s += "]}";
        return s;
    }
};

/// Run `reps` independent trajectories from the empty configuration and test
/// the terminal law: the total count against Poisson(M(X)(1 - e^{-horizon}))
/// in exact total variation, and the count means over a fixed partition
/// (halves of the first two axes, so four cells when d >= 2, two when d = 1)
/// against the independently thinned Poisson cell means.  One RNG stream per
/// trajectory keeps the result independent of `threads`.
inline StationarityReport stationarity_report(const IntensityMeasure& M, double horizon,
                                              std::size_t reps, RngSpec rng, int threads = 1,
                                              const Tolerances& tol = default_tolerances()) {
    if (!(horizon >= 0.0))
        throw ConfigError("stationarity_report: horizon must be nonnegative, got " +
                          std::to_string(horizon));

    const int d = M.dim();
    const int split_axes = d >= 2 ? 2 : 1;
    const std::size_t ncells = std::size_t{1} << split_axes;

    StationarityReport rep;
    rep.reps = reps;
    rep.horizon = horizon;
    rep.mass = M.total_mass();
    const double decay = 1.0 - std::exp(-horizon);
    rep.target_mean = rep.mass * decay;

    rep.cells.resize(ncells);
    for (std::size_t c = 0; c < ncells; ++c) {
        auto& cell = rep.cells[c];
        cell.lo.assign(static_cast<std::size_t>(d), 0.0);
        cell.hi.assign(static_cast<std::size_t>(d), 1.0);
        for (int a = 0; a < split_axes; ++a) {
            const bool upper = (c >> a) & 1U;
            cell.lo[static_cast<std::size_t>(a)] = upper ? 0.5 : 0.0;
            cell.hi[static_cast<std::size_t>(a)] = upper ? 1.0 : 0.5;
        }
        cell.mass = box_mass(M, cell.lo, cell.hi, tol);
    }

    std::vector<long long> counts(reps, 0);
    std::vector<long long> cell_counts(reps * ncells, 0);
    const PointConfiguration empty(d);
    run_replicates(reps, threads, [&](std::size_t r) {
        Rng eng = make_engine({rng.seed, rng.stream + r});
        const PointConfiguration w = simulate(empty, M, horizon, eng, tol);
        counts[r] = static_cast<long long>(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto p = w.point(i);
            std::size_t c = 0;
            for (int a = 0; a < split_axes; ++a)
                if (p[static_cast<std::size_t>(a)] >= 0.5) c |= std::size_t{1} << a;
            ++cell_counts[r * ncells + c];
        }
    });

    if (rep.target_mean > 0.0) {
        rep.count_tv = count_tv(counts, rep.target_mean);
    } else {
        // Poisson(0) puts all mass on zero, so the TV distance is simply the
        // empirical probability of seeing any point at all.
        std::size_t nonzero = 0;
        for (const long long v : counts) nonzero += v != 0;
        rep.count_tv = static_cast<double>(nonzero) / static_cast<double>(reps);
    }

    rep.max_abs_z = 0.0;
    for (std::size_t c = 0; c < ncells; ++c) {
        auto& cell = rep.cells[c];
        long long sum = 0;
        for (std::size_t r = 0; r < reps; ++r) sum += cell_counts[r * ncells + c];
        cell.mean = static_cast<double>(sum) / static_cast<double>(reps);
        const double lambda = cell.mass * decay;
        cell.z = detail::safe_z(cell.mean - lambda,
                                std::sqrt(lambda / static_cast<double>(reps)));
        rep.max_abs_z = std::max(rep.max_abs_z, std::abs(cell.z));
    }

    rep.pass = rep.count_tv < rep.tv_threshold && rep.max_abs_z < rep.z_threshold;
    return rep;
}

} // namespace steinpp
