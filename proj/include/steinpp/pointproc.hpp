#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "steinpp/geometry.hpp"
#include "steinpp/intensity.hpp"
#include "steinpp/parallel.hpp"
#include "steinpp/rng.hpp"
#include "steinpp/stats.hpp"

namespace steinpp {

/// Finite multiset of torus points, stored flat. Atom order is retained and
/// meaningful only for reproducibility; all semantics are multiset semantics.
class PointConfiguration {
  public:
    explicit PointConfiguration(int dim) : d_(dim) {
        if (dim < 1) throw DimensionMismatch("PointConfiguration: dimension must be positive");
    }

    int dim() const { return d_; }
    std::size_t size() const { return coords_.size() / static_cast<std::size_t>(d_); }
    bool empty() const { return coords_.empty(); }
    void reserve(std::size_t n) { coords_.reserve(n * static_cast<std::size_t>(d_)); }
    void clear() { coords_.clear(); }

    std::span<const double> point(std::size_t i) const {
        return {coords_.data() + i * static_cast<std::size_t>(d_), static_cast<std::size_t>(d_)};
    }

    void push_back(std::span<const double> x) {
        if (static_cast<int>(x.size()) != d_)
            throw DimensionMismatch("PointConfiguration: point dimension mismatch");
        coords_.insert(coords_.end(), x.begin(), x.end());
    }
    void push_back(std::initializer_list<double> x) {
        push_back(std::span<const double>(x.begin(), x.size()));
    }

    void pop_back() { coords_.resize(coords_.size() - static_cast<std::size_t>(d_)); }

    /// Remove atom i by moving the last atom into its slot (order not kept).
    void erase_swap(std::size_t i) {
        const std::size_t d = static_cast<std::size_t>(d_);
        const std::size_t last = size() - 1;
        if (i != last)
            std::copy_n(coords_.data() + last * d, d, coords_.data() + i * d);
        pop_back();
    }

    const std::vector<double>& raw() const { return coords_; }

  private:
    int d_;
    std::vector<double> coords_;
};

/// Text format: header `d=<dim> n=<count>`, then one point per line,
/// space-separated coordinates with 17 significant digits (value-exact).
inline void write_points(std::ostream& os, const PointConfiguration& cfg) {
    os << "d=" << cfg.dim() << " n=" << cfg.size() << "\n";
    char buf[40];
    for (std::size_t i = 0; i < cfg.size(); ++i) {
        const auto p = cfg.point(i);
        for (int a = 0; a < cfg.dim(); ++a) {
            std::snprintf(buf, sizeof(buf), "%.17g", p[a]);
            if (a > 0) os << ' ';
            os << buf;
        }
        os << "\n";
    }
}

inline PointConfiguration read_points(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw IoError("read_points: missing header");
    int d = 0;
    long long n = -1;
    if (std::sscanf(line.c_str(), "d=%d n=%lld", &d, &n) != 2 || d < 1 || n < 0)
        throw IoError("read_points: malformed header: " + line);
    PointConfiguration cfg(d);
    cfg.reserve(static_cast<std::size_t>(n));
    std::vector<double> p(static_cast<std::size_t>(d));
    for (long long i = 0; i < n; ++i) {
        if (!std::getline(is, line)) throw IoError("read_points: truncated point list");
        const char* s = line.c_str();
        char* end = nullptr;
        for (int a = 0; a < d; ++a) {
            p[static_cast<std::size_t>(a)] = std::strtod(s, &end);
            if (end == s) throw IoError("read_points: bad coordinate on line: " + line);
            s = end;
        }
        while (*s == ' ' || *s == '\t' || *s == '\r') ++s;
        if (*s != '\0') throw IoError("read_points: trailing garbage on line: " + line);
        cfg.push_back(p);
    }
    return cfg;
}

namespace detail {

inline void append_uniform_point(PointConfiguration& out, int d, Rng& eng) {
    double buf[16];
    std::vector<double> big;
    double* p = buf;
    if (d > 16) {
        big.resize(static_cast<std::size_t>(d));
        p = big.data();
    }
    for (int a = 0; a < d; ++a) p[a] = runif(eng);
    out.push_back(std::span<const double>(p, static_cast<std::size_t>(d)));
}

/// One point with law density/total via rejection against lambda_max.
inline void append_rejection_point(PointConfiguration& out, const IntensityMeasure& K, Rng& eng,
                                   const Tolerances& tol) {
    const int d = K.dim();
    const double lam_max = K.lambda_max();
    std::vector<double> p(static_cast<std::size_t>(d));
    for (unsigned long long tries = 0; tries < tol.sampler_budget; ++tries) {
        for (int a = 0; a < d; ++a) p[a] = runif(eng);
        if (runif(eng) * lam_max <= K.density(p)) {
            out.push_back(p);
            return;
        }
    }
    throw SamplerStuck("rejection sampler exceeded its proposal budget");
}

inline void append_point_from(PointConfiguration& out, const IntensityMeasure& K, Rng& eng,
                              const Tolerances& tol) {
    if (K.is_constant())
        append_uniform_point(out, K.dim(), eng);
    else
        append_rejection_point(out, K, eng, tol);
}

inline PointConfiguration sample_poisson_eng(const IntensityMeasure& K, Rng& eng,
                                             const Tolerances& tol) {
    PointConfiguration out(K.dim());
    const double mass = K.total_mass();
    if (mass <= 0.0) return out;
    const long long count = rpois(eng, mass);
    out.reserve(static_cast<std::size_t>(count));
    for (long long i = 0; i < count; ++i) append_point_from(out, K, eng, tol);
    return out;
}

} // namespace detail

/// Poisson process with intensity K: count ~ Poisson(K.total_mass()),
/// locations i.i.d. K/total (uniform for constant kinds, rejection otherwise).
inline PointConfiguration sample_poisson(const IntensityMeasure& K, const RngSpec& rng,
                                         const Tolerances& tol = default_tolerances()) {
    Rng eng = make_engine(rng);
    return detail::sample_poisson_eng(K, eng, tol);
}

/// Binomial process: exactly n i.i.d. points with probability law Q.
inline PointConfiguration sample_binomial(std::size_t n, const IntensityMeasure& Q,
                                          const RngSpec& rng,
                                          const Tolerances& tol = default_tolerances()) {
    if (std::abs(Q.total_mass() - 1.0) > tol.prob_mass)
        throw NotAProbability("sample_binomial: total mass differs from 1");
    Rng eng = make_engine(rng);
    PointConfiguration out(Q.dim());
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) detail::append_point_from(out, Q, eng, tol);
    return out;
}

/// Uniform-grid spatial index over the torus (CSR cell layout, immutable).
/// Keeps a pointer to the indexed configuration; the configuration must
/// outlive the index. All queries use exact torus distances; the grid only
/// narrows the candidate set.
class GridIndex {
  public:
    explicit GridIndex(const PointConfiguration& pts, int cells_per_axis = 0)
        : pts_(&pts), d_(pts.dim()) {
        if (d_ > 8) throw ConfigError("GridIndex: dimension above 8 is not supported");
        const std::size_t n = pts.size();
        if (cells_per_axis > 0) {
            m_ = cells_per_axis;
        } else {
            // ~4 atoms per cell amortizes the per-cell setup of ring and
            // ball walks without scanning much beyond the query radius
            m_ = static_cast<int>(std::floor(
                std::pow(static_cast<double>(std::max<std::size_t>(n, 1)) / 4.0, 1.0 / d_)));
            if (m_ < 1) m_ = 1;
        }
        // keep the cell table small relative to n (and bounded overall)
        while (m_ > 1 && cell_table_size(m_, d_) > std::max<double>(64.0, 4.0 * static_cast<double>(n)))
            --m_;
        while (m_ > 1 && cell_table_size(m_, d_) > 1e8) --m_;
        w_ = 1.0 / static_cast<double>(m_);
        // padded squared cell diagonal: any two locations in one cell are
        // strictly closer than this (the pad absorbs rounding), so a
        // nonempty cell can certify emptiness probes without distances
        diag2_pad_ = static_cast<double>(d_) * w_ * w_ * (1.0 + 1e-9);
        ncells_ = static_cast<std::size_t>(cell_table_size(m_, d_));

        std::vector<std::uint32_t> counts(ncells_ + 1, 0);
        std::vector<std::uint32_t> cell_of(n);
        for (std::size_t i = 0; i < n; ++i) {
            cell_of[i] = static_cast<std::uint32_t>(cell_of_point(pts.point(i)));
            ++counts[cell_of[i] + 1];
        }
        for (std::size_t c = 0; c < ncells_; ++c) counts[c + 1] += counts[c];
        start_ = counts;
        order_.resize(n);
        std::vector<std::uint32_t> cursor(start_.begin(), start_.end() - 1);
        for (std::size_t i = 0; i < n; ++i) order_[cursor[cell_of[i]]++] = static_cast<std::uint32_t>(i);
        // cell-ordered coordinate copy so hot loops read memory linearly
        coords_.resize(n * static_cast<std::size_t>(d_));
        for (std::size_t s = 0; s < n; ++s) {
            const auto p = pts.point(order_[s]);
            std::copy(p.begin(), p.end(),
                      coords_.begin() + static_cast<std::ptrdiff_t>(s * static_cast<std::size_t>(d_)));
        }
    }

    int dim() const { return d_; }
    int cells_per_axis() const { return m_; }
    double cell_width() const { return w_; }
    const PointConfiguration& points() const { return *pts_; }

    /// k-th smallest torus distance from x to atoms of the configuration;
    /// exclude_position skips every atom at torus distance exactly 0 from x
    /// (the measure-theoretic omega \ {x}). Exact: expanding Chebyshev rings
    /// of cells, stopping once no unvisited cell can hold a closer point.
    double knn_distance(std::span<const double> x, std::size_t k, bool exclude_position) const {
        if (k == 0) throw NotEnoughPoints("knn_distance: k must be >= 1");
        double qbuf[8];
        const std::span<const double> q = wrap_query(x, qbuf);
        // max-heap of the k smallest dist2 so far; stack storage for small k
        double sbuf[32];
        std::vector<double> vbuf;
        double* heap = sbuf;
        if (k > 32) {
            vbuf.resize(k);
            heap = vbuf.data();
        }
        std::size_t hs = 0;
        auto visit_cell = [&](std::size_t cell) {
            for (std::uint32_t s = start_[cell]; s < start_[cell + 1]; ++s) {
                const double dist2 = torus_dist2(q, slot_point(s));
                if (exclude_position && dist2 == 0.0) continue;
                if (hs < k) {
                    heap[hs++] = dist2;
                    std::push_heap(heap, heap + hs);
                } else if (dist2 < heap[0]) {
                    std::pop_heap(heap, heap + k);
                    heap[k - 1] = dist2;
                    std::push_heap(heap, heap + k);
                }
            }
        };
        const int ring_max = m_ / 2;
        for (int ring = 0;; ++ring) {
            for_each_ring_cell(q, ring, visit_cell);
            if (hs == k) {
                const double reach = static_cast<double>(ring) * w_;
                if (heap[0] <= reach * reach) break;
            }
            if (ring >= ring_max) break;
        }
        if (hs < k) throw NotEnoughPoints("knn_distance: fewer than k atoms available");
        return std::sqrt(heap[0]);
    }

    /// Number of atoms with torus distance <= r from x.
    std::size_t count_in_ball(std::span<const double> x, double r,
                              bool exclude_position = false) const {
        std::size_t count = 0;
        const double r2 = r * r;
        for_each_ball_cell(x, r, [&](std::size_t cell, std::span<const double> q) {
            for (std::uint32_t s = start_[cell]; s < start_[cell + 1]; ++s) {
                const double dist2 = torus_dist2(q, slot_point(s));
                if (exclude_position && dist2 == 0.0) continue;
                if (dist2 <= r2) ++count;
            }
            return false;
        });
        return count;
    }

    /// True iff at least kmin atoms lie within torus distance r (early exit).
    bool ball_count_at_least(std::span<const double> x, double r, std::size_t kmin,
                             bool exclude_position = false) const {
        if (kmin == 0) return true;
        std::size_t count = 0;
        const double r2 = r * r;
        return for_each_ball_cell(x, r, [&](std::size_t cell, std::span<const double> q) {
            for (std::uint32_t s = start_[cell]; s < start_[cell + 1]; ++s) {
                const double dist2 = torus_dist2(q, slot_point(s));
                if (exclude_position && dist2 == 0.0) continue;
                if (dist2 <= r2 && ++count >= kmin) return true;
            }
            return false;
        });
    }

    /// True iff some atom not in exclude (sorted indices) has dist2 < thresh2.
    /// Cells are visited in expanding rings so dense balls exit quickly; a
    /// nonempty center cell whose padded diagonal fits inside the ball
    /// certifies a hit without any distance computation.
    bool any_point_with_dist2_below(std::span<const double> x, double thresh2,
                                    std::span<const std::size_t> exclude_sorted) const {
        if (thresh2 <= 0.0) return false;
        double qbuf[8];
        const std::span<const double> q = wrap_query(x, qbuf);
        const bool no_exclude = exclude_sorted.empty();
        // ring 0: atoms in the query's own cell are strictly within the
        // padded cell diagonal of it
        const std::size_t c0 = cell_of_wrapped(q);
        const std::uint32_t b0 = start_[c0], e0 = start_[c0 + 1];
        if (b0 != e0) {
            if (no_exclude && diag2_pad_ < thresh2) return true;
            for (std::uint32_t s = b0; s < e0; ++s) {
                if (torus_dist2(q, slot_point(s)) < thresh2 &&
                    (no_exclude ||
                     !std::binary_search(exclude_sorted.begin(), exclude_sorted.end(),
                                         static_cast<std::size_t>(order_[s]))))
                    return true;
            }
        }
        bool found = false;
        auto visit_cell = [&](std::size_t cell) {
            if (found) return;
            for (std::uint32_t s = start_[cell]; s < start_[cell + 1]; ++s) {
                const double dist2 = torus_dist2(q, slot_point(s));
                if (dist2 < thresh2) {
                    if (no_exclude ||
                        !std::binary_search(exclude_sorted.begin(), exclude_sorted.end(),
                                            static_cast<std::size_t>(order_[s]))) {
                        found = true;
                        return;
                    }
                }
            }
        };
        const int ring_max = m_ / 2;
        for (int ring = 1; ring <= ring_max; ++ring) {
            // cells in ring L are at least (L-1)*w_ away; compare squared
            const double reach = static_cast<double>(ring - 1) * w_;
            if (reach * reach > thresh2) break;
            for_each_ring_cell(q, ring, visit_cell);
            if (found) return true;
        }
        return false;
    }

    /// Visit every atom within torus distance <= r: fn(index, dist2).
    template <class Fn>
    void for_each_in_ball(std::span<const double> x, double r, Fn&& fn) const {
        const double r2 = r * r;
        for_each_ball_cell(x, r, [&](std::size_t cell, std::span<const double> q) {
            for (std::uint32_t s = start_[cell]; s < start_[cell + 1]; ++s) {
                const double dist2 = torus_dist2(q, slot_point(s));
                if (dist2 <= r2) fn(static_cast<std::size_t>(order_[s]), dist2);
            }
            return false;
        });
    }

    /// Visit every unordered pair of atoms within torus distance <= r exactly
    /// once: fn(i, j, dist2, xi, xj) with i < j and xi/xj the coordinates of
    /// atoms i/j. Pairs arrive grouped by cell, not sorted by index.
    template <class Fn>
    void for_each_pair_within(double r, Fn&& fn) const {
        const std::size_t n = pts_->size();
        if (n < 2) return;
        const double r2 = r * r;
        // cells at per-axis offset o can hold r-partners only if |o| <= L
        const int L = static_cast<int>(std::floor(r * static_cast<double>(m_))) + 1;
        if (2 * L + 1 > m_) {
            // offsets would wrap onto each other; fall back to all pairs
            for (std::size_t i = 0; i + 1 < n; ++i) {
                const auto pi = pts_->point(i);
                for (std::size_t j = i + 1; j < n; ++j) {
                    const auto pj = pts_->point(j);
                    const double dist2 = torus_dist2(pi, pj);
                    if (dist2 <= r2) fn(i, j, dist2, pi, pj);
                }
            }
            return;
        }
        // same-cell pairs (slots within a cell hold increasing atom indices)
        for (std::size_t c = 0; c < ncells_; ++c) {
            for (std::uint32_t s1 = start_[c]; s1 < start_[c + 1]; ++s1) {
                const auto p1 = slot_point(s1);
                for (std::uint32_t s2 = s1 + 1; s2 < start_[c + 1]; ++s2) {
                    const auto p2 = slot_point(s2);
                    const double dist2 = torus_dist2(p1, p2);
                    if (dist2 <= r2)
                        fn(static_cast<std::size_t>(order_[s1]),
                           static_cast<std::size_t>(order_[s2]), dist2, p1, p2);
                }
            }
        }
        // cross-cell pairs: each unordered cell pair is reached through a
        // unique lexicographically positive offset (no wrap: 2L+1 <= m);
        // offsets whose cells are provably farther than r are dropped
        std::vector<std::array<int, 8>> offs;
        {
            std::array<int, 8> off{};
            for (int a = 0; a < d_; ++a) off[a] = -L;
            for (;;) {
                bool positive = false;
                for (int a = d_ - 1; a >= 0; --a) {
                    if (off[a] != 0) {
                        positive = off[a] > 0;
                        break;
                    }
                }
                if (positive) {
                    double min2 = 0.0;
                    for (int a = 0; a < d_; ++a) {
                        const double e =
                            static_cast<double>(std::max(std::abs(off[a]) - 1, 0)) * w_;
                        min2 += e * e;
                    }
                    if (min2 <= r2 * (1.0 + 1e-9)) offs.push_back(off);
                }
                int a = 0;
                for (; a < d_; ++a) {
                    if (++off[a] <= L) break;
                    off[a] = -L;
                }
                if (a == d_) break;
            }
        }
        int cc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
        for (std::size_t c = 0; c < ncells_; ++c) {
            if (start_[c + 1] > start_[c]) {
                for (const auto& off : offs) {
                    std::size_t c2 = 0;
                    for (int a = d_ - 1; a >= 0; --a) {
                        int v = cc[a] + off[a];
                        if (v < 0) v += m_;
                        else if (v >= m_) v -= m_;
                        c2 = c2 * static_cast<std::size_t>(m_) + static_cast<std::size_t>(v);
                    }
                    if (start_[c2 + 1] == start_[c2]) continue;
                    for (std::uint32_t s1 = start_[c]; s1 < start_[c + 1]; ++s1) {
                        const auto p1 = slot_point(s1);
                        const std::size_t i1 = order_[s1];
                        for (std::uint32_t s2 = start_[c2]; s2 < start_[c2 + 1]; ++s2) {
                            const auto p2 = slot_point(s2);
                            const double dist2 = torus_dist2(p1, p2);
                            if (dist2 <= r2) {
                                const std::size_t i2 = order_[s2];
                                if (i1 < i2) fn(i1, i2, dist2, p1, p2);
                                else fn(i2, i1, dist2, p2, p1);
                            }
                        }
                    }
                }
            }
            int a = 0;
            for (; a < d_; ++a) {
                if (++cc[a] < m_) break;
                cc[a] = 0;
            }
        }
    }

  private:
    static double cell_table_size(int m, int d) {
        double t = 1.0;
        for (int a = 0; a < d; ++a) t *= static_cast<double>(m);
        return t;
    }

    std::size_t cell_of_point(std::span<const double> p) const {
        std::size_t id = 0;
        for (int a = d_ - 1; a >= 0; --a) {
            int c = static_cast<int>(wrap_unit(p[static_cast<std::size_t>(a)]) *
                                     static_cast<double>(m_));
            if (c >= m_) c = m_ - 1;
            if (c < 0) c = 0;
            id = id * static_cast<std::size_t>(m_) + static_cast<std::size_t>(c);
        }
        return id;
    }

    /// Wrap a query point into [0,1)^d using caller stack storage (d <= 8,
    /// enforced by the constructor). Queries are hot paths; no allocation.
    std::span<const double> wrap_query(std::span<const double> x, double (&buf)[8]) const {
        for (int a = 0; a < d_; ++a) buf[a] = wrap_unit(x[static_cast<std::size_t>(a)]);
        return {buf, static_cast<std::size_t>(d_)};
    }

    /// Coordinates of the atom in CSR slot s (cell-ordered copy; the atom's
    /// index is order_[s]).
    std::span<const double> slot_point(std::uint32_t s) const {
        return {coords_.data() + static_cast<std::size_t>(s) * static_cast<std::size_t>(d_),
                static_cast<std::size_t>(d_)};
    }

    /// cell_of_point for a query already wrapped into [0,1)^d.
    std::size_t cell_of_wrapped(std::span<const double> q) const {
        std::size_t id = 0;
        for (int a = d_ - 1; a >= 0; --a) {
            int c = static_cast<int>(q[static_cast<std::size_t>(a)] * static_cast<double>(m_));
            if (c >= m_) c = m_ - 1;
            id = id * static_cast<std::size_t>(m_) + static_cast<std::size_t>(c);
        }
        return id;
    }

    /// Cells whose Chebyshev cell-offset ring (canonical cyclic offsets) is
    /// exactly `ring`, enumerated once each. Offsets live in
    /// [-(m-1)/2, m/2]; a cell is in ring L iff its max |offset| is L.
    template <class Fn>
    void for_each_ring_cell(std::span<const double> q, int ring, Fn&& fn) const {
        int c0[8];
        for (int a = 0; a < d_; ++a) {
            int c = static_cast<int>(q[static_cast<std::size_t>(a)] * static_cast<double>(m_));
            if (c >= m_) c = m_ - 1;
            c0[a] = c;
        }
        const int neg_max = (m_ - 1) / 2, pos_max = m_ / 2;
        auto abs_cell = [&](int a, int o) {
            int c = c0[a] + o;
            if (c < 0) c += m_;
            else if (c >= m_) c -= m_;
            return c;
        };
        if (ring == 0) {
            std::size_t id = 0;
            for (int a = d_ - 1; a >= 0; --a)
                id = id * static_cast<std::size_t>(m_) + static_cast<std::size_t>(c0[a]);
            fn(id);
            return;
        }
        // decompose the ring by the first axis whose |offset| equals `ring`
        int off[8];
        for (int fix = 0; fix < d_; ++fix) {
            for (int sign = -1; sign <= 1; sign += 2) {
                const int o_fix = sign * ring;
                if (sign < 0 && ring > neg_max) continue;
                if (sign > 0 && ring > pos_max) continue;
                // axes before fix: |o| <= ring-1; axes after: |o| <= ring
                bool feasible = true;
                int lo[8], hi[8];
                for (int a = 0; a < d_; ++a) {
                    if (a == fix) {
                        lo[a] = hi[a] = o_fix;
                    } else {
                        const int cap = (a < fix) ? ring - 1 : ring;
                        lo[a] = -std::min(cap, neg_max);
                        hi[a] = std::min(cap, pos_max);
                        if (lo[a] > hi[a]) feasible = false;
                    }
                }
                if (!feasible) continue;
                for (int a = 0; a < d_; ++a) off[a] = lo[a];
                for (;;) {
                    std::size_t id = 0;
                    for (int a = d_ - 1; a >= 0; --a)
                        id = id * static_cast<std::size_t>(m_) +
                             static_cast<std::size_t>(abs_cell(a, off[a]));
                    fn(id);
                    int a = 0;
                    for (; a < d_; ++a) {
                        if (++off[a] <= hi[a]) break;
                        off[a] = lo[a];
                    }
                    if (a == d_) break;
                }
            }
        }
    }

    /// Visit each cell intersecting the bounding box of B_r(x) exactly once.
    /// fn(cell, wrapped_query) returning true stops the walk; the final
    /// return is whether any fn returned true.
    template <class Fn>
    bool for_each_ball_cell(std::span<const double> x, double r, Fn&& fn) const {
        double qbuf[8];
        const std::span<const double> q = wrap_query(x, qbuf);
        // odometer over the box of cells; cur[] tracks the wrapped cell
        // coordinate incrementally so the walk is division-free
        int len[8], cur[8], begin[8], idx[8];
        for (int a = 0; a < d_; ++a) {
            const double xa = q[static_cast<std::size_t>(a)];
            const int cl = static_cast<int>(std::floor((xa - r) * static_cast<double>(m_)));
            const int ch = static_cast<int>(std::floor((xa + r) * static_cast<double>(m_)));
            if (ch - cl + 1 >= m_) {
                begin[a] = 0;
                len[a] = m_;
            } else {
                begin[a] = cl % m_;
                if (begin[a] < 0) begin[a] += m_;
                len[a] = ch - cl + 1;
            }
            cur[a] = begin[a];
            idx[a] = 0;
        }
        for (;;) {
            std::size_t id = 0;
            for (int a = d_ - 1; a >= 0; --a)
                id = id * static_cast<std::size_t>(m_) + static_cast<std::size_t>(cur[a]);
            if (fn(id, q)) return true;
            int a = 0;
            for (; a < d_; ++a) {
                if (++idx[a] < len[a]) {
                    if (++cur[a] == m_) cur[a] = 0;
                    break;
                }
                idx[a] = 0;
                cur[a] = begin[a];
            }
            if (a == d_) return false;
        }
    }

    const PointConfiguration* pts_;
    int d_;
    int m_ = 1;
    double w_ = 1.0;
    double diag2_pad_ = 0.0;
    std::size_t ncells_ = 1;
    std::vector<std::uint32_t> start_;
    std::vector<std::uint32_t> order_;
    std::vector<double> coords_;
};

/// k-th nearest neighbor distance within omega (the R_k of the k-NN marks).
inline double knn_distance(std::span<const double> x, const PointConfiguration& omega,
                           std::size_t k, bool exclude_self) {
    const GridIndex idx(omega);
    return idx.knn_distance(x, k, exclude_self);
}

/// Two-sided Monte Carlo check of the Mecke identity
///   E sum_{x in eta} f(x, eta) = integral E f(x, eta + delta_x) K(dx).
struct CheckReport {
    double lhs = 0.0, lhs_se = 0.0;
    double rhs = 0.0, rhs_se = 0.0;
    double z = 0.0;
    bool pass = true;
    std::size_t replicates = 0;
};

inline CheckReport mecke_check(
    const IntensityMeasure& K,
    const std::function<double(std::span<const double>, const PointConfiguration&)>& test,
    std::size_t reps, const RngSpec& rng, int threads = 1,
    const Tolerances& tol = default_tolerances()) {
    std::vector<double> lhs(reps), rhs(reps);
    const double mass = K.total_mass();
    run_replicates(reps, threads, [&](std::size_t r) {
        Rng eng = make_engine(RngSpec{rng.seed, rng.stream + r});
        const auto eta = detail::sample_poisson_eng(K, eng, tol);
        double sum = 0.0;
        for (std::size_t i = 0; i < eta.size(); ++i) sum += test(eta.point(i), eta);
        lhs[r] = sum;
        if (mass > 0.0) {
            PointConfiguration xcfg(K.dim());
            detail::append_point_from(xcfg, K, eng, tol);
            auto eta2 = detail::sample_poisson_eng(K, eng, tol);
            eta2.push_back(xcfg.point(0));
            rhs[r] = mass * test(xcfg.point(0), eta2);
        } else {
            rhs[r] = 0.0;
        }
    });
    CheckReport out;
    const auto sl = summarize(lhs);
    const auto sr = summarize(rhs);
    out.lhs = sl.mean;
    out.lhs_se = sl.se;
    out.rhs = sr.mean;
    out.rhs_se = sr.se;
    out.z = z_score(sl, sr);
    out.pass = std::abs(out.z) <= 4.0;
    out.replicates = reps;
    return out;
}

} // namespace steinpp
