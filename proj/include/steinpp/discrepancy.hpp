#pragma once

// Exact multiset distances between configurations, plus statistical
// surrogates that compare simulated marked processes against a limiting
// Poisson process: total-variation distance of the count marginal, the
// max-mark law, and cellwise count/covariance checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "steinpp/errors.hpp"
#include "steinpp/functionals.hpp"
#include "steinpp/pointproc.hpp"
#include "steinpp/stats.hpp"

namespace steinpp {

/// How atoms of two marked configurations are identified with each other.
///  - by_provenance: atoms match iff their generating index tuples are equal.
///    Float-free; mark and location changes are invisible. Intended for two
///    configurations derived from the same underlying point set.
///  - by_coordinates_exact: atoms match iff location and mark are bitwise
///    equal. Generators are ignored. Intended for independent samples.
enum class MatchMode { by_provenance, by_coordinates_exact };

/// One-sided multiset difference counts between two configurations.
struct MultisetDiff {
    std::size_t only_first = 0;  ///< atoms of the first with no partner
    std::size_t only_second = 0; ///< atoms of the second with no partner

    /// Size of the symmetric difference (the norm ||w1 - w2||).
    std::size_t symmetric() const { return only_first + only_second; }
};

namespace detail {

/// Greatest multiset matching between two key sequences. `cmp(x, i, y, j)`
/// three-way-compares key i of container x with key j of container y under a
/// strict weak order shared by both sides.
template <class Cfg, class Cmp3>
MultisetDiff diff_by_keys(const Cfg& a, const Cfg& b, Cmp3&& cmp) {
    std::vector<std::size_t> ia(a.size()), ib(b.size());
    std::iota(ia.begin(), ia.end(), std::size_t{0});
    std::iota(ib.begin(), ib.end(), std::size_t{0});
    std::sort(ia.begin(), ia.end(),
              [&](std::size_t i, std::size_t j) { return cmp(a, i, a, j) < 0; });
    std::sort(ib.begin(), ib.end(),
              [&](std::size_t i, std::size_t j) { return cmp(b, i, b, j) < 0; });
    std::size_t matched = 0, i = 0, j = 0;
    while (i < ia.size() && j < ib.size()) {
        const int c = cmp(a, ia[i], b, ib[j]);
        if (c == 0) {
            ++matched;
            ++i;
            ++j;
        } else if (c < 0) {
            ++i;
        } else {
            ++j;
        }
    }
    return {a.size() - matched, b.size() - matched};
}

inline int cmp_doubles_bitwise(std::span<const double> p, std::span<const double> q) {
    return std::memcmp(p.data(), q.data(), p.size() * sizeof(double));
}

} // namespace detail

/// Multiset difference between two unmarked configurations; atoms match iff
/// their coordinates are bitwise equal.
inline MultisetDiff multiset_diff(const PointConfiguration& a, const PointConfiguration& b) {
    if (a.dim() != b.dim())
        throw DimensionMismatch("multiset_diff: configurations have different dimensions");
    return detail::diff_by_keys(
        a, b, [](const PointConfiguration& x, std::size_t i, const PointConfiguration& y, std::size_t j) {
            return detail::cmp_doubles_bitwise(x.point(i), y.point(j));
        });
}

/// Multiset difference between two marked configurations under the chosen
/// matching mode (provenance by default; see MatchMode).
inline MultisetDiff multiset_diff(const MarkedConfiguration& a, const MarkedConfiguration& b,
                                  MatchMode mode = MatchMode::by_provenance) {
    if (a.dim() != b.dim())
        throw DimensionMismatch("multiset_diff: configurations have different dimensions");
    if (a.arity() != b.arity())
        throw DimensionMismatch("multiset_diff: configurations have different arities");
    if (mode == MatchMode::by_provenance) {
        return detail::diff_by_keys(
            a, b, [](const MarkedConfiguration& x, std::size_t i, const MarkedConfiguration& y, std::size_t j) {
                const auto gi = x.gen(i), gj = y.gen(j);
                return std::memcmp(gi.data(), gj.data(), gi.size() * sizeof(std::uint32_t));
            });
    }
    return detail::diff_by_keys(
        a, b, [](const MarkedConfiguration& x, std::size_t i, const MarkedConfiguration& y, std::size_t j) {
            if (const int c = detail::cmp_doubles_bitwise(x.unit(i), y.unit(j)); c != 0) return c;
            const double mi = x.mark(i), mj = y.mark(j);
            return std::memcmp(&mi, &mj, sizeof(double));
        });
}

/// Total-variation distance between two configurations viewed as counting
/// measures: the larger of the two one-sided multiset difference counts.
inline double config_dtv(const PointConfiguration& a, const PointConfiguration& b) {
    const MultisetDiff d = multiset_diff(a, b);
    return static_cast<double>(std::max(d.only_first, d.only_second));
}

inline double config_dtv(const MarkedConfiguration& a, const MarkedConfiguration& b,
                         MatchMode mode = MatchMode::by_provenance) {
    const MultisetDiff d = multiset_diff(a, b, mode);
    return static_cast<double>(std::max(d.only_first, d.only_second));
}

/// Total-variation distance between the empirical law of integer count
/// samples and the Poisson(mean) law, computed exactly on {0, ..., cap} with
/// cap = floor(mean + 10 sqrt(mean)); both laws' tail masses beyond cap are
/// added in full (each contributing half its mass).
inline double count_tv(std::span<const long long> samples, double mean) {
    if (samples.size() < 1000)
        throw TooFewSamples("count_tv: need at least 1000 samples, got " +
                            std::to_string(samples.size()));
    if (!(mean > 0.0)) throw ConfigError("count_tv: mean must be positive");
    for (const long long v : samples)
        if (v < 0) throw ConfigError("count_tv: counts must be nonnegative");

    const auto cap = static_cast<long long>(std::floor(mean + 10.0 * std::sqrt(mean)));
    std::vector<double> freq(static_cast<std::size_t>(cap) + 1, 0.0);
    double over = 0.0;
    for (const long long v : samples) {
        if (v <= cap)
            freq[static_cast<std::size_t>(v)] += 1.0;
        else
            over += 1.0;
    }
    const auto n = static_cast<double>(samples.size());
    double tv = 0.0;
    for (long long k = 0; k <= cap; ++k)
        tv += 0.5 * std::abs(freq[static_cast<std::size_t>(k)] / n -
                             poisson_pmf(static_cast<unsigned>(k), mean));
    tv += 0.5 * (over / n);
    tv += 0.5 * (1.0 - poisson_cdf(static_cast<unsigned>(cap), mean));
    return std::min(tv, 1.0);
}

/// z-ratio with the conventions 0/0 -> 0 and d/0 -> +-infinity.
namespace detail {
inline double safe_z(double diff, double se) {
    if (se == 0.0) {
        if (diff == 0.0) return 0.0;
        return diff > 0.0 ? std::numeric_limits<double>::infinity()
                          : -std::numeric_limits<double>::infinity();
    }
    return diff / se;
}
} // namespace detail

/// One grid level of the max-mark law check.
struct GumbelRow {
    double b = 0.0;         ///< grid level
    double empirical = 0.0; ///< empirical P(max mark <= b)
    double target = 0.0;    ///< exp(-M(X x (b, inf)))
    double se = 0.0;        ///< binomial SE under the target probability
    double z = 0.0;         ///< (empirical - target) / se
    std::size_t n = 0;      ///< number of samples
};

/// Compares the empirical distribution of per-sample maximum marks against
/// the law P(max <= b) = exp(-tail(b)), where tail(b) is the limit measure of
/// marks above b. A sample with no atoms has max -infinity and counts as
/// below every level.
template <class Tail>
std::vector<GumbelRow> gumbel_check(std::span<const double> max_marks,
                                    std::span<const double> b_grid, Tail&& tail) {
    std::vector<GumbelRow> rows;
    rows.reserve(b_grid.size());
    const auto n = static_cast<double>(max_marks.size());
    for (const double b : b_grid) {
        GumbelRow r;
        r.b = b;
        r.n = max_marks.size();
        r.target = std::exp(-static_cast<double>(tail(b)));
        std::size_t below = 0;
        for (const double m : max_marks)
            if (m <= b) ++below;
        r.empirical = max_marks.empty() ? 0.0 : static_cast<double>(below) / n;
        r.se = max_marks.empty() ? 0.0 : std::sqrt(r.target * (1.0 - r.target) / n);
        r.z = detail::safe_z(r.empirical - r.target, r.se);
        rows.push_back(r);
    }
    return rows;
}

/// Measurable cell of the mark space: a half-open spatial box [lo, hi) times
/// a mark band (mark_lo, mark_hi], with its limit-measure mass.
struct Cell {
    std::vector<double> lo, hi;
    double mark_lo = -std::numeric_limits<double>::infinity();
    double mark_hi = std::numeric_limits<double>::infinity();
    double mass = 0.0;

    bool contains(std::span<const double> u, double mark) const {
        for (std::size_t a = 0; a < lo.size(); ++a)
            if (!(u[a] >= lo[a] && u[a] < hi[a])) return false;
        return mark > mark_lo && mark <= mark_hi;
    }
};

/// Per-cell statistics against the Poisson(mass) null.
struct CellStats {
    Cell cell;
    double mean = 0.0;    ///< empirical mean count
    double var = 0.0;     ///< empirical (unbiased) count variance
    double p_empty = 0.0; ///< empirical avoidance probability P(count = 0)
    double z_mean = 0.0;  ///< (mean - mass) / sqrt(mass / N)
    double z_var = 0.0;   ///< (var - mass) / sqrt((mass + 2 mass^2) / N)
    double z_avoid = 0.0; ///< (p_empty - e^{-mass}) / binomial SE
};

/// Pairwise cell-count covariance against the independence null.
struct CovStat {
    std::size_t i = 0, j = 0;
    double cov = 0.0; ///< sample covariance of counts in cells i and j
    double z = 0.0;   ///< cov / sqrt(mass_i * mass_j / N)
};

namespace detail {

inline void append_num(std::string& out, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

inline void append_json_num(std::string& out, double v) {
    if (!std::isfinite(v)) {
        out += "null";
        return;
    }
    append_num(out, v);
}

inline void append_json_array(std::string& out, std::span<const double> v) {
    out += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        append_json_num(out, v[i]);
    }
    out += ']';
}

} // namespace detail

/// Serializes max-mark rows as a flat CSV table.
inline std::string gumbel_csv(std::span<const GumbelRow> rows) {
    std::string out = "b,empirical,target,se,z,n\n";
    for (const auto& r : rows) {
        detail::append_num(out, r.b);
        out += ',';
        detail::append_num(out, r.empirical);
        out += ',';
        detail::append_num(out, r.target);
        out += ',';
        detail::append_num(out, r.se);
        out += ',';
        detail::append_num(out, r.z);
        out += ',';
        out += std::to_string(r.n);
        out += '\n';
    }
    return out;
}

/// Aggregated closeness report of simulated marked samples against a
/// limiting Poisson process with independent cell counts.
struct DiscrepancyReport {
    std::size_t n_samples = 0;
    double count_tv = 0.0;      ///< TV of the total-count marginal vs Poisson
    double max_abs_z = 0.0;     ///< worst per-cell |z| (mean, var, avoidance)
    double max_abs_cov_z = 0.0; ///< worst pairwise covariance |z|
    double z_threshold = 4.0;
    double tv_threshold = 1.0;
    bool pass = false;
    std::vector<CellStats> cells;
    std::vector<CovStat> cov;
    std::vector<GumbelRow> gumbel; ///< optional max-mark rows (may be empty)

    /// Flat CSV: one header line plus one row per cell.
    std::string to_csv() const {
        std::string out;
        const std::size_t d = cells.empty() ? 0 : cells.front().cell.lo.size();
        for (std::size_t a = 0; a < d; ++a)
            out += "lo" + std::to_string(a) + ",hi" + std::to_string(a) + ",";
        out += "mark_lo,mark_hi,mass,mean,var,p_empty,z_mean,z_var,z_avoid\n";
        for (const auto& c : cells) {
            for (std::size_t a = 0; a < d; ++a) {
                detail::append_num(out, c.cell.lo[a]);
                out += ',';
                detail::append_num(out, c.cell.hi[a]);
                out += ',';
            }
            const double vals[] = {c.cell.mark_lo, c.cell.mark_hi, c.cell.mass, c.mean,
                                   c.var,          c.p_empty,      c.z_mean,    c.z_var,
                                   c.z_avoid};
            for (std::size_t k = 0; k < std::size(vals); ++k) {
                if (k) out += ',';
                detail::append_num(out, vals[k]);
            }
            out += '\n';
        }
        return out;
    }

    std::string to_json() const {
        std::string out = "{";
        out += "\"n_samples\":" + std::to_string(n_samples);
        out += ",\"count_tv\":";
        detail::append_json_num(out, count_tv);
        out += ",\"max_abs_z\":";
        detail::append_json_num(out, max_abs_z);
        out += ",\"max_abs_cov_z\":";
        detail::append_json_num(out, max_abs_cov_z);
        out += ",\"z_threshold\":";
        detail::append_json_num(out, z_threshold);
        out += ",\"tv_threshold\":";
        detail::append_json_num(out, tv_threshold);
        out += ",\"pass\":";
        out += pass ? "true" : "false";
        out += ",\"cells\":[";
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const auto& c = cells[i];
            if (i) out += ',';
            out += "{\"lo\":";
            detail::append_json_array(out, c.cell.lo);
            out += ",\"hi\":";
            detail::append_json_array(out, c.cell.hi);
            out += ",\"mark_lo\":";
            detail::append_json_num(out, c.cell.mark_lo);
            out += ",\"mark_hi\":";
            detail::append_json_num(out, c.cell.mark_hi);
            out += ",\"mass\":";
            detail::append_json_num(out, c.cell.mass);
            out += ",\"mean\":";
            detail::append_json_num(out, c.mean);
            out += ",\"var\":";
            detail::append_json_num(out, c.var);
            out += ",\"p_empty\":";
            detail::append_json_num(out, c.p_empty);
            out += ",\"z_mean\":";
            detail::append_json_num(out, c.z_mean);
            out += ",\"z_var\":";
            detail::append_json_num(out, c.z_var);
            out += ",\"z_avoid\":";
            detail::append_json_num(out, c.z_avoid);
            out += '}';
        }
        out += "],\"cov\":[";
        for (std::size_t k = 0; k < cov.size(); ++k) {
            if (k) out += ',';
            out += "{\"i\":" + std::to_string(cov[k].i) + ",\"j\":" + std::to_string(cov[k].j);
            out += ",\"cov\":";
            detail::append_json_num(out, cov[k].cov);
            out += ",\"z\":";
            detail::append_json_num(out, cov[k].z);
            out += '}';
        }
        out += "],\"gumbel\":[";
        for (std::size_t k = 0; k < gumbel.size(); ++k) {
            const auto& r = gumbel[k];
            if (k) out += ',';
            out += "{\"b\":";
            detail::append_json_num(out, r.b);
            out += ",\"empirical\":";
            detail::append_json_num(out, r.empirical);
            out += ",\"target\":";
            detail::append_json_num(out, r.target);
            out += ",\"se\":";
            detail::append_json_num(out, r.se);
            out += ",\"z\":";
            detail::append_json_num(out, r.z);
            out += ",\"n\":" + std::to_string(r.n);
            out += '}';
        }
        out += "]}";
        return out;
    }
};

/// Compares per-cell counts of marked samples against independent
/// Poisson(mass) cell marginals, pairwise covariances against zero, and the
/// total-count marginal against Poisson(m_total). All z-scores use the SE of
/// the corresponding estimator under the Poisson null. Requires at least
/// 10^4 samples.
inline DiscrepancyReport cellwise_report(const std::vector<MarkedConfiguration>& samples,
                                         const std::vector<Cell>& cells, double m_total,
                                         double z_threshold = 4.0, double tv_threshold = 1.0) {
    if (samples.size() < 10000)
        throw TooFewSamples("cellwise_report: need at least 10^4 samples, got " +
                            std::to_string(samples.size()));
    if (!(m_total > 0.0)) throw ConfigError("cellwise_report: total mass must be positive");
    const std::size_t dim = samples.front().dim();
    for (const auto& c : cells)
        if (c.lo.size() != dim || c.hi.size() != dim)
            throw DimensionMismatch("cellwise_report: cell dimension differs from samples");

    const std::size_t N = samples.size(), C = cells.size();
    std::vector<double> sum(C, 0.0), sum2(C, 0.0), zero(C, 0.0);
    std::vector<double> cross(C * C, 0.0); // upper triangle used
    std::vector<long long> totals(N, 0);
    std::vector<double> cnt(C);
    for (std::size_t s = 0; s < N; ++s) {
        const auto& m = samples[s];
        totals[s] = static_cast<long long>(m.size());
        std::fill(cnt.begin(), cnt.end(), 0.0);
        for (std::size_t t = 0; t < m.size(); ++t) {
            const auto u = m.unit(t);
            const double mk = m.mark(t);
            for (std::size_t c = 0; c < C; ++c)
                if (cells[c].contains(u, mk)) cnt[c] += 1.0;
        }
        for (std::size_t c = 0; c < C; ++c) {
            sum[c] += cnt[c];
            sum2[c] += cnt[c] * cnt[c];
            if (cnt[c] == 0.0) zero[c] += 1.0;
            for (std::size_t c2 = c + 1; c2 < C; ++c2) cross[c * C + c2] += cnt[c] * cnt[c2];
        }
    }

    DiscrepancyReport rep;
    rep.n_samples = N;
    rep.z_threshold = z_threshold;
    rep.tv_threshold = tv_threshold;
    rep.count_tv = count_tv(totals, m_total);

    const auto n = static_cast<double>(N);
    rep.cells.reserve(C);
    for (std::size_t c = 0; c < C; ++c) {
        CellStats st;
        st.cell = cells[c];
        st.mean = sum[c] / n;
        st.var = (sum2[c] - n * st.mean * st.mean) / (n - 1.0);
        if (st.var < 0.0) st.var = 0.0; // cancellation guard
        st.p_empty = zero[c] / n;
        const double mass = cells[c].mass;
        st.z_mean = detail::safe_z(st.mean - mass, std::sqrt(mass / n));
        st.z_var = detail::safe_z(st.var - mass, std::sqrt((mass + 2.0 * mass * mass) / n));
        const double p0 = std::exp(-mass);
        st.z_avoid = detail::safe_z(st.p_empty - p0, std::sqrt(p0 * (1.0 - p0) / n));
        rep.cells.push_back(std::move(st));
        const double worst = std::max({std::abs(rep.cells.back().z_mean),
                                       std::abs(rep.cells.back().z_var),
                                       std::abs(rep.cells.back().z_avoid)});
        rep.max_abs_z = std::max(rep.max_abs_z, worst);
    }
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = i + 1; j < C; ++j) {
            CovStat cs;
            cs.i = i;
            cs.j = j;
            cs.cov = (cross[i * C + j] - n * rep.cells[i].mean * rep.cells[j].mean) / (n - 1.0);
            cs.z = detail::safe_z(cs.cov, std::sqrt(cells[i].mass * cells[j].mass / n));
            rep.max_abs_cov_z = std::max(rep.max_abs_cov_z, std::abs(cs.z));
            rep.cov.push_back(cs);
        }

    rep.pass = rep.max_abs_z <= z_threshold && rep.max_abs_cov_z <= z_threshold &&
               rep.count_tv <= tv_threshold;
    return rep;
}

} // namespace steinpp
