#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "steinpp/errors.hpp"
#include "steinpp/geometry.hpp"
#include "steinpp/intensity.hpp"
#include "steinpp/pointproc.hpp"

namespace steinpp {

/// Highest supported torus dimension (fixed-size buffers in hot loops).
inline constexpr int kMaxDim = 8;

/// Everything an evaluation needs to see of the ambient configuration.
/// The grid must index exactly the configuration `omega`.
struct EvalContext {
    const PointConfiguration& omega;
    const GridIndex& grid;
};

/// Outcome of evaluating one generating tuple. `unit` holds the atom's
/// location on the torus (first dim() entries). `s_radius` is the radius of
/// the stabilization ball B(x1, s_radius) that determines the score, and
/// `sx_radius` the radius of the truncation ball B(x1, sx_radius); both are
/// centered at the first tuple point, so containment of regions reduces to
/// comparing radii.
struct EvalResult {
    int g = 0;
    double mark = std::numeric_limits<double>::quiet_NaN();
    double unit[kMaxDim] = {};
    double s_radius = std::numeric_limits<double>::infinity();
    double sx_radius = std::numeric_limits<double>::infinity();
    bool degenerate = false;
};

/// Counters accumulated by eval_xi across all evaluated tuples.
struct EvalStats {
    std::size_t evaluated = 0;
    std::size_t degenerate = 0;
};

/// Outcome of the pair fast path: the score indicator and the degeneracy
/// flag, mirroring EvalResult::g and EvalResult::degenerate.
struct PairScore {
    int g = 0;
    bool degenerate = false;
};

/// A score functional with localized (stabilizing) dependence: the score of a
/// tuple depends on the configuration only within the ball
/// B(x1, s_radius), and the truncated score additionally requires that ball
/// to lie inside B(x1, sx_radius).
class StabilizingFunctional {
  public:
    virtual ~StabilizingFunctional() = default;

    /// Number of points in a generating tuple.
    virtual std::size_t arity() const = 0;
    virtual int dim() const = 0;

    /// Every tuple that can score g = 1 has all its non-anchor points within
    /// this torus distance of the anchor (used to enumerate candidates).
    /// Meaningless for arity 1.
    virtual double prune_radius() const = 0;

    /// Whether scoring tuples can have a stabilization ball that is not
    /// contained in the truncation ball.
    virtual bool escape_possible() const = 0;

    virtual EvalResult evaluate(std::span<const std::size_t> tuple,
                                const EvalContext& ctx) const = 0;

    /// Truncated indicator g * 1{stabilization ball inside truncation ball},
    /// computed with early exits (no mark, no full evaluation).
    virtual int gtilde(std::span<const std::size_t> tuple, const EvalContext& ctx) const = 0;

    /// Fast score of the 2-point tuple {i, j}, given the squared torus
    /// distance between the points and their coordinates (all available for
    /// free during pair enumeration). Must agree with evaluate() on g and
    /// degenerate; the default delegates to it. Used only when arity() == 2.
    virtual PairScore score_pair(std::size_t i, std::size_t j, double dist2,
                                 std::span<const double> xi, std::span<const double> xj,
                                 const EvalContext& ctx) const {
        (void)dist2;
        (void)xi;
        (void)xj;
        const std::size_t t[2] = {i, j};
        const EvalResult res = evaluate(std::span<const std::size_t>(t, 2), ctx);
        return {res.g, res.degenerate};
    }

    /// Escape indicator g * 1{stabilization ball NOT inside truncation ball}.
    virtual int g_escaped(std::span<const std::size_t> tuple, const EvalContext& ctx) const = 0;

    /// Radius of the truncation ball for an anchor at x1.
    virtual double sx_radius(std::span<const double> x1) const = 0;
};

// ---------------------------------------------------------------------------
// k-nearest-neighbor mark functional
// ---------------------------------------------------------------------------

/// Parameters of the k-NN mark functional. `n` is the scaling parameter (the
/// expected point count), `b0 < b` the lower/upper mark thresholds: marks
/// above b0 score, and the truncation ball is calibrated at level b.
struct KnnParams {
    std::size_t k = 1;
    double n = 0.0;
    double b0 = 0.0;
    double b = 0.0;

    /// Centering sequence log n + (k-1) loglog n - log (k-1)!.
    double a_n() const {
        return std::log(n) + (static_cast<double>(k) - 1.0) * std::log(std::log(n)) -
               std::lgamma(static_cast<double>(k));
    }
};

namespace detail {

class KnnFunctional final : public StabilizingFunctional {
  public:
    KnnFunctional(const KnnParams& p, IntensityMeasure law, const Tolerances& tol)
        : p_(p), Q_(std::move(law)), tol_(tol) {
        if (p_.k < 1) throw ConfigError("knn functional: k must be at least 1");
        if (!(p_.n >= 3.0)) throw ConfigError("knn functional: n must be at least 3");
        if (!(p_.b > p_.b0)) throw ConfigError("knn functional: need b > b0");
        if (Q_.dim() > kMaxDim) throw ConfigError("knn functional: dimension too large");
        if (std::abs(Q_.total_mass() - 1.0) > tol_.prob_mass)
            throw NotAProbability("knn functional: the point law must be a probability measure");
        a_n_ = p_.a_n();
        if (Q_.is_constant()) {
            const std::vector<double> origin(static_cast<std::size_t>(Q_.dim()), 0.0);
            r_b0_ = radius_for_mass(Q_, origin, a_n_ + p_.b0, p_.n, tol_);
            r_b_ = radius_for_mass(Q_, origin, a_n_ + p_.b, p_.n, tol_);
        }
    }

    std::size_t arity() const override { return 1; }
    int dim() const override { return Q_.dim(); }
    double prune_radius() const override { return 0.0; }
    bool escape_possible() const override { return true; }

    EvalResult evaluate(std::span<const std::size_t> tuple,
                        const EvalContext& ctx) const override {
        const auto x = ctx.omega.point(tuple[0]);
        EvalResult res;
        double rk;
        try {
            rk = ctx.grid.knn_distance(x, p_.k, /*exclude_position=*/true);
        } catch (const NotEnoughPoints&) {
            rk = std::numeric_limits<double>::infinity();
        }
        // A neighborhood ball with 2 r >= 1 wraps the torus; its mass is the
        // whole measure. Under the intended scaling this has probability
        // exp(-Theta(n)) and the mark saturates at n - a_n.
        const double mass = rk < 0.5 ? ball_measure(Q_, x, rk, tol_) : 1.0;
        res.mark = p_.n * mass - a_n_;
        const double rb0 = lower_radius(x);
        const double rb = upper_radius(x);
        // score iff the k-NN ball needs more than the level-b0 calibrated
        // radius; equivalent to mark > b0 except on fp-boundary ties
        res.g = rk > rb0 ? 1 : 0;
        res.s_radius = rk;
        res.sx_radius = rb;
        for (int a = 0; a < Q_.dim(); ++a) res.unit[a] = x[static_cast<std::size_t>(a)];
        return res;
    }

    int gtilde(std::span<const std::size_t> tuple, const EvalContext& ctx) const override {
        const auto x = ctx.omega.point(tuple[0]);
        // R_k <= r  iff  the closed ball of radius r holds at least k others
        if (ctx.grid.ball_count_at_least(x, lower_radius(x), p_.k, true)) return 0;
        return ctx.grid.ball_count_at_least(x, upper_radius(x), p_.k, true) ? 1 : 0;
    }

    int g_escaped(std::span<const std::size_t> tuple, const EvalContext& ctx) const override {
        const auto x = ctx.omega.point(tuple[0]);
        // escaping means R_k > r_b, which already implies R_k > r_b0, i.e. g=1
        return ctx.grid.ball_count_at_least(x, upper_radius(x), p_.k, true) ? 0 : 1;
    }

    double sx_radius(std::span<const double> x1) const override { return upper_radius(x1); }

    const KnnParams& params() const { return p_; }
    const IntensityMeasure& law() const { return Q_; }

  private:
    double lower_radius(std::span<const double> x) const {
        return Q_.is_constant() ? r_b0_ : radius_for_mass(Q_, x, a_n_ + p_.b0, p_.n, tol_);
    }
    double upper_radius(std::span<const double> x) const {
        return Q_.is_constant() ? r_b_ : radius_for_mass(Q_, x, a_n_ + p_.b, p_.n, tol_);
    }

    KnnParams p_;
    IntensityMeasure Q_;
    Tolerances tol_;
    double a_n_ = 0.0;
    double r_b0_ = 0.0;
    double r_b_ = 0.0;
};

} // namespace detail

/// k-NN mark functional: each point x carries mark n Q(B(x, R_k)) - a_n with
/// R_k its k-th nearest neighbor distance; it scores when the mark exceeds
/// b0. The stabilization ball is B(x, R_k); the truncation ball B(x, r_b)
/// is calibrated so that n Q(B(x, r_b)) = a_n + b. `law` is the probability
/// law of a single point.
inline std::unique_ptr<StabilizingFunctional> make_knn_functional(
    const KnnParams& params, const IntensityMeasure& law,
    const Tolerances& tol = default_tolerances()) {
    return std::make_unique<detail::KnnFunctional>(params, law, tol);
}

// ---------------------------------------------------------------------------
// critical points of the distance function
// ---------------------------------------------------------------------------

/// Parameters of the index-k critical point functional on the d-torus.
/// Circumradii are admitted in the window (r_n, R_n].
struct CritParams {
    std::size_t k = 1;
    int d = 2;
    double n = 0.0;
    double alpha0 = 0.0;
    double r_n = 0.0;
    double R_n = 0.0;
};

/// Solve omega_d n r_n^d = log n + (k-1) loglog n + alpha0 for the lower
/// cutoff; the upper cutoff defaults to sqrt(r_n). Pass R_n_explicit > 0 to
/// override the default.
inline CritParams make_crit_params(std::size_t k, int d, double n, double alpha0,
                                   double R_n_explicit = 0.0) {
    if (d < 1 || d > kMaxDim) throw ConfigError("critical functional: unsupported dimension");
    if (k < 1 || k > static_cast<std::size_t>(d))
        throw ConfigError("critical functional: index k must lie in [1, d]");
    if (!(n >= 3.0)) throw ConfigError("critical functional: n must be at least 3");
    const double target =
        std::log(n) + (static_cast<double>(k) - 1.0) * std::log(std::log(n)) + alpha0;
    if (!(target > 0.0))
        throw ConfigError("critical functional: window mass must be positive");
    const double r = std::pow(target / (n * unit_ball_volume(d)), 1.0 / d);
    if (!(r < 0.5))
        throw ConfigError("critical functional: lower cutoff radius reaches half the torus");
    const double R = R_n_explicit > 0.0 ? R_n_explicit : std::sqrt(r);
    if (!(R > r)) throw ConfigError("critical functional: upper cutoff must exceed r_n");
    if (!(R <= 0.5))
        throw ConfigError("critical functional: upper cutoff must be at most 1/2");
    return CritParams{k, d, n, alpha0, r, R};
}

namespace detail {

class CritFunctional final : public StabilizingFunctional {
  public:
    CritFunctional(const CritParams& p, const Tolerances& tol) : p_(p), tol_(tol) {
        if (p_.d < 1 || p_.d > kMaxDim)
            throw ConfigError("critical functional: unsupported dimension");
        if (p_.k < 1 || p_.k > static_cast<std::size_t>(p_.d))
            throw ConfigError("critical functional: index k must lie in [1, d]");
        if (!(p_.R_n > p_.r_n) || !(p_.r_n > 0.0) || !(p_.R_n <= 0.5))
            throw ConfigError("critical functional: invalid radius window");
        center_ = std::log(p_.n) +
                  (static_cast<double>(p_.k) - 1.0) * std::log(std::log(p_.n));
        vol_coef_ = p_.n * unit_ball_volume(p_.d);
    }

    std::size_t arity() const override { return p_.k + 1; }
    int dim() const override { return p_.d; }
    double prune_radius() const override { return 2.0 * p_.R_n; }
    bool escape_possible() const override { return false; }

    EvalResult evaluate(std::span<const std::size_t> tuple,
                        const EvalContext& ctx) const override {
        EvalResult res;
        res.sx_radius = 2.0 * p_.R_n;
        const auto x1 = ctx.omega.point(tuple[0]);
        const std::size_t d = static_cast<std::size_t>(p_.d);

        double center[kMaxDim];
        double rho;
        bool interior;
        if (tuple.size() == 2) {
            // two generators: the critical point is the midpoint of the
            // shorter arc, at half the pair distance
            const auto x2 = ctx.omega.point(tuple[1]);
            double d2 = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                const double disp = min_displacement(x1[a], x2[a]);
                center[a] = wrap_unit(x1[a] + 0.5 * disp);
                d2 += 0.25 * (disp * disp);
            }
            rho = std::sqrt(d2);
            res.degenerate = rho == 0.0;
            interior = !res.degenerate;
        } else {
            // tuples must fit one lifting chart; candidates that do not are
            // out of window whenever R_n is below the chart half-width
            for (std::size_t j = 1; j < tuple.size(); ++j) {
                const auto xj = ctx.omega.point(tuple[j]);
                for (std::size_t a = 0; a < d; ++a)
                    if (std::abs(min_displacement(x1[a], xj[a])) > tol_.lift_window)
                        return res;
            }
            std::vector<TorusPoint> tup(tuple.size());
            for (std::size_t j = 0; j < tuple.size(); ++j) {
                const auto xj = ctx.omega.point(tuple[j]);
                tup[j].assign(xj.begin(), xj.end());
            }
            const auto cs = circumsphere(tup, tol_);
            if (!cs) {
                res.degenerate = true;
                return res;
            }
            for (std::size_t a = 0; a < d; ++a) center[a] = cs->center[a];
            rho = cs->radius;
            interior = cs->interior;
        }

        res.s_radius = 2.0 * rho;
        double rho_d = rho;
        for (std::size_t a = 1; a < d; ++a) rho_d *= rho;
        res.mark = vol_coef_ * rho_d - center_;
        for (std::size_t a = 0; a < d; ++a) res.unit[a] = center[a];

        if (!(rho > p_.r_n) || !(rho <= p_.R_n)) return res;
        if (!interior) return res;
        // the open circumball must contain no configuration point; the
        // generators sit on its boundary and are kept out by the margin
        const double thr = rho - tol_.open_ball * std::max(1.0, rho);
        if (thr > 0.0 &&
            ctx.grid.any_point_with_dist2_below(std::span<const double>(center, d), thr * thr,
                                                {}))
            return res;
        res.g = 1;
        return res;
    }

    int gtilde(std::span<const std::size_t> tuple, const EvalContext& ctx) const override {
        // scoring tuples have rho <= R_n, so the stabilization ball
        // B(x1, 2 rho) always sits inside the truncation ball B(x1, 2 R_n)
        return evaluate(tuple, ctx).g;
    }

    PairScore score_pair(std::size_t /*i*/, std::size_t /*j*/, double /*dist2*/,
                         std::span<const double> x1, std::span<const double> x2,
                         const EvalContext& ctx) const override {
        // same displacement arithmetic as evaluate() on a pair, so the
        // window and probe decisions match it bit for bit; skips the mark
        // and the result assembly
        const std::size_t d = static_cast<std::size_t>(p_.d);
        double center[kMaxDim];
        double d2 = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            const double disp = min_displacement(x1[a], x2[a]);
            center[a] = wrap_unit(x1[a] + 0.5 * disp);
            d2 += 0.25 * (disp * disp);
        }
        const double rho = std::sqrt(d2);
        PairScore out;
        out.degenerate = rho == 0.0;
        if (!(rho > p_.r_n) || !(rho <= p_.R_n) || out.degenerate) return out;
        const double thr = rho - tol_.open_ball * std::max(1.0, rho);
        if (thr > 0.0 &&
            ctx.grid.any_point_with_dist2_below(std::span<const double>(center, d), thr * thr,
                                                {}))
            return out;
        out.g = 1;
        return out;
    }

    int g_escaped(std::span<const std::size_t>, const EvalContext&) const override { return 0; }

    double sx_radius(std::span<const double>) const override { return 2.0 * p_.R_n; }

    const CritParams& params() const { return p_; }

  private:
    CritParams p_;
    Tolerances tol_;
    double center_ = 0.0;
    double vol_coef_ = 0.0;
};

} // namespace detail

/// Index-k critical points of the torus distance function: a (k+1)-tuple
/// scores when its circumcenter lies strictly inside the tuple's convex
/// hull, the open circumball is empty of configuration points, and the
/// circumradius rho falls in (r_n, R_n]. The mark is
/// omega_d n rho^d - log n - (k-1) loglog n; the stabilization ball is
/// B(x1, 2 rho) and the truncation ball B(x1, 2 R_n).
inline std::unique_ptr<StabilizingFunctional> make_critical_functional(
    const CritParams& params, const Tolerances& tol = default_tolerances()) {
    return std::make_unique<detail::CritFunctional>(params, tol);
}

// ---------------------------------------------------------------------------
// marked configurations
// ---------------------------------------------------------------------------

/// Atoms of a marked point process on (torus) x (real line): a unit-space
/// location, a real mark, and the generating tuple's atom indices.
class MarkedConfiguration {
  public:
    MarkedConfiguration(int dim, std::size_t arity) : d_(dim), m_(arity) {
        if (dim < 1 || dim > kMaxDim)
            throw DimensionMismatch("MarkedConfiguration: unsupported dimension");
        if (arity < 1) throw ConfigError("MarkedConfiguration: arity must be at least 1");
    }

    int dim() const { return d_; }
    std::size_t arity() const { return m_; }
    std::size_t size() const { return marks_.size(); }
    bool empty() const { return marks_.empty(); }

    void reserve(std::size_t n) {
        units_.reserve(n * static_cast<std::size_t>(d_));
        marks_.reserve(n);
        gens_.reserve(n * m_);
    }

    std::span<const double> unit(std::size_t i) const {
        return {units_.data() + i * static_cast<std::size_t>(d_), static_cast<std::size_t>(d_)};
    }
    double mark(std::size_t i) const { return marks_[i]; }
    std::span<const std::uint32_t> gen(std::size_t i) const {
        return {gens_.data() + i * m_, m_};
    }

    void push_atom(std::span<const double> u, double mark, std::span<const std::uint32_t> g) {
        if (u.size() != static_cast<std::size_t>(d_))
            throw DimensionMismatch("MarkedConfiguration: unit coordinate size mismatch");
        if (g.size() != m_)
            throw DimensionMismatch("MarkedConfiguration: generating tuple size mismatch");
        units_.insert(units_.end(), u.begin(), u.end());
        marks_.push_back(mark);
        gens_.insert(gens_.end(), g.begin(), g.end());
    }

    /// Number of atoms with mark strictly above u.
    std::size_t count_marks_above(double u) const {
        std::size_t c = 0;
        for (const double m : marks_)
            if (m > u) ++c;
        return c;
    }

    double max_mark() const {
        double best = -std::numeric_limits<double>::infinity();
        for (const double m : marks_) best = std::max(best, m);
        return best;
    }

    const std::vector<double>& marks() const { return marks_; }

  private:
    int d_;
    std::size_t m_;
    std::vector<double> units_;
    std::vector<double> marks_;
    std::vector<std::uint32_t> gens_;
};

/// Text format, one atom per line: unit coordinates, the mark (all with 17
/// significant digits, value-exact), then the generating indices.
inline void write_marked(std::ostream& os, const MarkedConfiguration& mc) {
    char buf[40];
    for (std::size_t i = 0; i < mc.size(); ++i) {
        const auto u = mc.unit(i);
        for (int a = 0; a < mc.dim(); ++a) {
            std::snprintf(buf, sizeof(buf), "%.17g", u[static_cast<std::size_t>(a)]);
            if (a > 0) os << ' ';
            os << buf;
        }
        std::snprintf(buf, sizeof(buf), "%.17g", mc.mark(i));
        os << ' ' << buf;
        for (const std::uint32_t g : mc.gen(i)) os << ' ' << g;
        os << "\n";
    }
}

inline MarkedConfiguration read_marked(std::istream& is, int dim, std::size_t arity) {
    MarkedConfiguration out(dim, arity);
    std::string line;
    std::vector<double> u(static_cast<std::size_t>(dim));
    std::vector<std::uint32_t> g(arity);
    while (std::getline(is, line)) {
        const char* s = line.c_str();
        char* end = nullptr;
        for (int a = 0; a < dim; ++a) {
            u[static_cast<std::size_t>(a)] = std::strtod(s, &end);
            if (end == s) throw IoError("read_marked: bad unit coordinate: " + line);
            s = end;
        }
        const double mark = std::strtod(s, &end);
        if (end == s) throw IoError("read_marked: bad mark: " + line);
        s = end;
        for (std::size_t a = 0; a < arity; ++a) {
            const unsigned long v = std::strtoul(s, &end, 10);
            if (end == s) throw IoError("read_marked: bad generating index: " + line);
            g[a] = static_cast<std::uint32_t>(v);
            s = end;
        }
        while (*s == ' ' || *s == '\t' || *s == '\r') ++s;
        if (*s != '\0') throw IoError("read_marked: trailing garbage on line: " + line);
        out.push_atom(u, mark, g);
    }
    return out;
}

// ---------------------------------------------------------------------------
// full evaluation of the marked process
// ---------------------------------------------------------------------------

/// Evaluate every admissible generating tuple of the configuration and
/// collect the scoring atoms. Tuples are enumerated as an anchor index plus
/// an increasing set of neighbor indices above it within prune_radius, so
/// each unordered tuple is visited exactly once and the output order is
/// deterministic.
inline MarkedConfiguration eval_xi(const StabilizingFunctional& F, const EvalContext& ctx,
                                   EvalStats* stats = nullptr) {
    if (ctx.omega.dim() != F.dim())
        throw DimensionMismatch("eval_xi: configuration/functional dimension mismatch");
    const std::size_t n = ctx.omega.size();
    if (n > std::numeric_limits<std::uint32_t>::max())
        throw ConfigError("eval_xi: configuration too large for 32-bit atom indices");
    const std::size_t m = F.arity();
    const int d = F.dim();
    MarkedConfiguration out(d, m);
    std::uint32_t genbuf[kMaxDim + 1];
    std::vector<std::size_t> tuple(m);

    auto emit = [&](const EvalResult& res) {
        if (stats) {
            ++stats->evaluated;
            if (res.degenerate) ++stats->degenerate;
        }
        if (res.g != 1) return;
        for (std::size_t j = 0; j < m; ++j) genbuf[j] = static_cast<std::uint32_t>(tuple[j]);
        out.push_atom(std::span<const double>(res.unit, static_cast<std::size_t>(d)), res.mark,
                      std::span<const std::uint32_t>(genbuf, m));
    };

    if (m == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            tuple[0] = i;
            emit(F.evaluate(tuple, ctx));
        }
        return out;
    }

    if (m == 2) {
        // pairs: sweep each unordered pair once through the fast score path
        // and keep the rare scorers; their full results are recomputed in
        // lexicographic order afterwards, so the output and the counters
        // match the generic route exactly
        std::vector<std::pair<std::size_t, std::size_t>> scorers;
        std::size_t evaluated = 0, degenerate = 0;
        ctx.grid.for_each_pair_within(
            F.prune_radius(), [&](std::size_t i, std::size_t j, double dist2,
                                  std::span<const double> xi, std::span<const double> xj) {
                ++evaluated;
                const PairScore ps = F.score_pair(i, j, dist2, xi, xj, ctx);
                if (ps.degenerate) ++degenerate;
                if (ps.g == 1) scorers.emplace_back(i, j);
            });
        if (stats) {
            stats->evaluated += evaluated;
            stats->degenerate += degenerate;
        }
        std::sort(scorers.begin(), scorers.end());
        for (const auto& [i, j] : scorers) {
            tuple[0] = i;
            tuple[1] = j;
            const EvalResult res = F.evaluate(tuple, ctx);
            if (res.g != 1) continue; // score_pair broke its contract
            genbuf[0] = static_cast<std::uint32_t>(i);
            genbuf[1] = static_cast<std::uint32_t>(j);
            out.push_atom(std::span<const double>(res.unit, static_cast<std::size_t>(d)),
                          res.mark, std::span<const std::uint32_t>(genbuf, 2));
        }
        return out;
    }

    const double prune = F.prune_radius();
    std::vector<std::size_t> nb;
    std::vector<std::size_t> sel(m - 1);
    for (std::size_t i = 0; i < n; ++i) {
        nb.clear();
        ctx.grid.for_each_in_ball(ctx.omega.point(i), prune, [&](std::size_t j, double) {
            if (j > i) nb.push_back(j);
        });
        if (nb.size() < m - 1) continue;
        std::sort(nb.begin(), nb.end());
        for (std::size_t j = 0; j < m - 1; ++j) sel[j] = j;
        tuple[0] = i;
        for (;;) {
            for (std::size_t j = 0; j < m - 1; ++j) tuple[j + 1] = nb[sel[j]];
            emit(F.evaluate(tuple, ctx));
            // next (m-1)-subset in lexicographic order
            std::size_t a = m - 1;
            while (a-- > 0)
                if (sel[a] != nb.size() - (m - 1 - a)) break;
            if (a == std::numeric_limits<std::size_t>::max()) break;
            ++sel[a];
            for (std::size_t j = a + 1; j < m - 1; ++j) sel[j] = sel[j - 1] + 1;
        }
    }
    return out;
}

inline MarkedConfiguration eval_xi(const StabilizingFunctional& F,
                                   const PointConfiguration& omega,
                                   EvalStats* stats = nullptr) {
    // point-query workloads (arity 1) fare best near the grid's default of
    // ~4 atoms per cell; pair sweeps and emptiness probes amortize their
    // per-cell setup better with coarser cells
    int cells = 0;
    if (F.arity() >= 2 && omega.size() > 0) {
        cells = static_cast<int>(
            std::floor(std::pow(static_cast<double>(omega.size()) / 8.0,
                                1.0 / static_cast<double>(F.dim()))));
        if (cells < 1) cells = 1;
    }
    const GridIndex grid(omega, cells);
    return eval_xi(F, EvalContext{omega, grid}, stats);
}

} // namespace steinpp
