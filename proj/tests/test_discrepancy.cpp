// Tests for multiset configuration distances and the statistical surrogates
// (count TV, max-mark law, cellwise Poisson checks).

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "steinpp/discrepancy.hpp"
#include "steinpp/functionals.hpp"
#include "steinpp/pointproc.hpp"
#include "steinpp/rng.hpp"

using namespace steinpp;

namespace {

PointConfiguration cfg2(std::initializer_list<std::pair<double, double>> pts) {
    PointConfiguration c(2);
    for (const auto& [x, y] : pts) c.push_back({x, y});
    return c;
}

// Brute-force one-sided multiset difference on exact coordinate keys.
std::size_t brute_only_first(const PointConfiguration& a, const PointConfiguration& b) {
    std::vector<bool> used(b.size(), false);
    std::size_t only = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        bool matched = false;
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (used[j]) continue;
            const auto p = a.point(i), q = b.point(j);
            if (std::equal(p.begin(), p.end(), q.begin())) {
                used[j] = true;
                matched = true;
                break;
            }
        }
        if (!matched) ++only;
    }
    return only;
}

PointConfiguration random_small(Rng& eng, int max_pts, int grid) {
    // Coordinates snapped to a coarse lattice so collisions are common.
    PointConfiguration c(2);
    const int n = static_cast<int>(runif(eng) * (max_pts + 1));
    for (int i = 0; i < n; ++i) {
        const double x = std::floor(runif(eng) * grid) / grid;
        const double y = std::floor(runif(eng) * grid) / grid;
        c.push_back({x, y});
    }
    return c;
}

} // namespace

TEST_CASE("config distance counts exact multiset differences") {
    const auto a = cfg2({{0.1, 0.1}, {0.1, 0.1}, {0.2, 0.2}});
    const auto b = cfg2({{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}});

    SECTION("identical configurations") {
        CHECK(config_dtv(a, a) == 0.0);
        const auto d = multiset_diff(a, a);
        CHECK(d.only_first == 0);
        CHECK(d.only_second == 0);
    }

    SECTION("the two-common-one-extra example") {
        // {a,a,b} vs {a,b,c}: one 'a' unmatched on the left, 'c' unmatched on
        // the right; the distance is max(1,1)=1.
        const auto d = multiset_diff(a, b);
        CHECK(d.only_first == 1);
        CHECK(d.only_second == 1);
        CHECK(config_dtv(a, b) == 1.0);
    }

    SECTION("subset gives the one-sided count") {
        auto big = a;
        big.push_back({0.7, 0.7});
        big.push_back({0.8, 0.8});
        const auto d = multiset_diff(a, big);
        CHECK(d.only_first == 0);
        CHECK(d.only_second == 2);
        CHECK(config_dtv(a, big) == 2.0);
        // Sandwich collapses: ||a - big|| = 2, dtv = 2 (equality for subsets).
        CHECK(d.symmetric() == 2);
    }
}

TEST_CASE("config distance is a metric and sandwiches the norm") {
    Rng eng = make_engine({4242, 0});
    for (int trial = 0; trial < 400; ++trial) {
        const auto a = random_small(eng, 6, 4);
        const auto b = random_small(eng, 6, 4);
        const auto c = random_small(eng, 6, 4);

        const double dab = config_dtv(a, b);
        const double dba = config_dtv(b, a);
        const double dac = config_dtv(a, c);
        const double dcb = config_dtv(c, b);

        // Symmetry and identity.
        CHECK(dab == dba);
        CHECK(config_dtv(a, a) == 0.0);
        // Triangle inequality.
        CHECK(dab <= dac + dcb);

        // Norm sandwich: dtv <= only1+only2 <= 2 dtv.
        const auto d = multiset_diff(a, b);
        const double norm = static_cast<double>(d.symmetric());
        CHECK(dab <= norm);
        CHECK(norm <= 2.0 * dab);

        // Cross-check the one-sided counts against brute force.
        CHECK(d.only_first == brute_only_first(a, b));
        CHECK(d.only_second == brute_only_first(b, a));
    }
}

TEST_CASE("marked configuration matching modes") {
    MarkedConfiguration m1(2, 1), m2(2, 1);
    const std::uint32_t g0 = 4, g1 = 9;
    m1.push_atom(std::array<double, 2>{0.25, 0.5}, 1.5, {&g0, 1});
    m1.push_atom(std::array<double, 2>{0.75, 0.5}, 2.5, {&g1, 1});
    // Same generating tuples, one mark changed.
    m2.push_atom(std::array<double, 2>{0.25, 0.5}, 1.5, {&g0, 1});
    m2.push_atom(std::array<double, 2>{0.75, 0.5}, 9.0, {&g1, 1});

    SECTION("provenance matching ignores marks") {
        const auto d = multiset_diff(m1, m2, MatchMode::by_provenance);
        CHECK(d.only_first == 0);
        CHECK(d.only_second == 0);
        CHECK(config_dtv(m1, m2, MatchMode::by_provenance) == 0.0);
    }

    SECTION("coordinate matching sees the mark change") {
        const auto d = multiset_diff(m1, m2, MatchMode::by_coordinates_exact);
        CHECK(d.only_first == 1);
        CHECK(d.only_second == 1);
        CHECK(config_dtv(m1, m2, MatchMode::by_coordinates_exact) == 1.0);
    }

    SECTION("different generators do not match under provenance") {
        MarkedConfiguration m3(2, 1);
        const std::uint32_t g2 = 7;
        m3.push_atom(std::array<double, 2>{0.25, 0.5}, 1.5, {&g2, 1});
        m3.push_atom(std::array<double, 2>{0.75, 0.5}, 2.5, {&g1, 1});
        CHECK(config_dtv(m1, m3, MatchMode::by_provenance) == 1.0);
        // Coordinates + marks are identical, so coordinate matching sees none.
        CHECK(config_dtv(m1, m3, MatchMode::by_coordinates_exact) == 0.0);
    }
}

TEST_CASE("count tv against a Poisson law") {
    SECTION("point mass at zero versus Poisson(5)") {
        std::vector<long long> zeros(2000, 0);
        const double tv = count_tv(zeros, 5.0);
        CHECK(tv == Catch::Approx(0.9932620530009145).epsilon(1e-12));
    }

    SECTION("vanishing mean with all-zero samples") {
        std::vector<long long> zeros(2000, 0);
        CHECK(count_tv(zeros, 1e-9) == Catch::Approx(0.0).margin(2e-9));
    }

    SECTION("true Poisson draws give small TV") {
        Rng eng = make_engine({515, 3});
        std::vector<long long> s(1000000);
        for (auto& v : s) v = rpois(eng, 4.0);
        const double tv = count_tv(s, 4.0);
        CHECK(tv < 0.005);
        CHECK(tv >= 0.0);

        SECTION("permutation invariance") {
            std::mt19937_64 shuf(99);
            std::shuffle(s.begin(), s.end(), shuf);
            CHECK(count_tv(s, 4.0) == tv);
        }
    }

    SECTION("too few samples") {
        std::vector<long long> s(999, 1);
        CHECK_THROWS_AS(count_tv(s, 1.0), TooFewSamples);
        s.push_back(1);
        CHECK_NOTHROW(count_tv(s, 1.0));
    }

    SECTION("negative counts are rejected") {
        std::vector<long long> s(1000, 0);
        s[17] = -2;
        CHECK_THROWS_AS(count_tv(s, 1.0), ConfigError);
    }
}

TEST_CASE("gumbel max-mark law check") {
    // Under the limiting marked process with tail mass e^{-b}, the no-atom
    // probability above level b is exp(-e^{-b}).
    const auto tail = [](double b) { return std::exp(-b); };

    SECTION("plug-in targets") {
        const std::vector<double> maxes{-1.0, 0.5, 2.0, -3.0}; // values irrelevant here
        const std::vector<double> grid{0.0, 1.0, 50.0};
        const auto rows = gumbel_check(maxes, grid, tail);
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].target == Catch::Approx(0.36787944117144233).epsilon(1e-15));
        CHECK(rows[1].target == Catch::Approx(0.6922006275553464).epsilon(1e-15));
        CHECK(rows[2].target == Catch::Approx(1.0).epsilon(1e-12));
        for (const auto& r : rows) CHECK(r.n == maxes.size());
    }

    SECTION("simulated maxima match the law") {
        // Max mark of the limit process: P(max <= b) = exp(-e^{-b}) when an
        // empty sample counts as max = -infinity. Simulate the limit directly:
        // N ~ Poisson(1) atoms, marks with tail e^{-t}/e^{0} on (0,inf) —
        // i.e. standard exponentials.
        Rng eng = make_engine({616, 0});
        const std::size_t reps = 200000;
        std::vector<double> maxes(reps);
        for (auto& v : maxes) {
            const long long npts = rpois(eng, 1.0);
            double mx = -std::numeric_limits<double>::infinity();
            for (long long i = 0; i < npts; ++i) mx = std::max(mx, rexp(eng, 1.0));
            v = mx;
        }
        const std::vector<double> grid{0.0, 1.0, 2.0};
        const auto rows = gumbel_check(maxes, grid, tail);
        for (const auto& r : rows) {
            INFO("b=" << r.b << " emp=" << r.empirical << " target=" << r.target);
            CHECK(std::abs(r.z) <= 4.0);
            CHECK(r.se > 0.0);
        }
    }

    SECTION("empirical probabilities are counted correctly") {
        const std::vector<double> maxes{0.5, 1.5, -2.0, 3.0};
        const std::vector<double> grid{1.0};
        const auto rows = gumbel_check(maxes, grid, tail);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].empirical == Catch::Approx(0.5).epsilon(1e-15)); // {0.5, -2.0}
    }
}

namespace {

// Samples from the limiting marked process on the unit square with
// M(dx,dt) = dx e^{-t} dt on t > 0: atom count ~ Poisson(1), locations
// uniform, marks standard exponential.
MarkedConfiguration sample_limit_process(Rng& eng) {
    MarkedConfiguration m(2, 1);
    const long long npts = rpois(eng, 1.0);
    for (long long i = 0; i < npts; ++i) {
        const double u[2] = {runif(eng), runif(eng)};
        const std::uint32_t g = static_cast<std::uint32_t>(i);
        m.push_atom(std::span<const double>(u, 2), rexp(eng, 1.0), {&g, 1});
    }
    return m;
}

std::vector<Cell> quadrant_band_cells() {
    // 4 spatial quadrants x mark bands (0,1] and (1,inf); M-masses for the
    // limit process above: 0.25(1-e^{-1}) and 0.25 e^{-1}.
    std::vector<Cell> cells;
    const double lo1 = 1.0 - std::exp(-1.0), lo2 = std::exp(-1.0);
    for (int qx = 0; qx < 2; ++qx)
        for (int qy = 0; qy < 2; ++qy) {
            Cell c1;
            c1.lo = {0.5 * qx, 0.5 * qy};
            c1.hi = {0.5 * qx + 0.5, 0.5 * qy + 0.5};
            c1.mark_lo = 0.0;
            c1.mark_hi = 1.0;
            c1.mass = 0.25 * lo1;
            cells.push_back(c1);
            Cell c2 = c1;
            c2.mark_lo = 1.0;
            c2.mark_hi = std::numeric_limits<double>::infinity();
            c2.mass = 0.25 * lo2;
            cells.push_back(c2);
        }
    return cells;
}

} // namespace

TEST_CASE("cellwise report separates null from corrupted samples") {
    const auto cells = quadrant_band_cells();

    SECTION("null distribution passes") {
        Rng eng = make_engine({717, 0});
        std::vector<MarkedConfiguration> samples;
        samples.reserve(20000);
        for (int i = 0; i < 20000; ++i) samples.push_back(sample_limit_process(eng));
        const auto rep = cellwise_report(samples, cells, 1.0);
        CHECK(rep.n_samples == 20000);
        REQUIRE(rep.cells.size() == cells.size());
        INFO("max|z|=" << rep.max_abs_z << " count_tv=" << rep.count_tv);
        CHECK(rep.max_abs_z <= 4.0);
        CHECK(rep.max_abs_cov_z <= 4.0);
        CHECK(rep.count_tv < 0.02);
        CHECK(rep.pass);
        for (const auto& c : rep.cells) {
            CHECK(c.mean >= 0.0);
            CHECK(c.var >= 0.0);
        }
    }

    SECTION("deterministic one-atom samples blow up the variance score") {
        std::vector<MarkedConfiguration> samples;
        for (int i = 0; i < 10000; ++i) {
            MarkedConfiguration m(2, 1);
            const double u[2] = {0.1, 0.1};
            const std::uint32_t g = 0;
            m.push_atom(std::span<const double>(u, 2), 0.5, {&g, 1});
            samples.push_back(std::move(m));
        }
        const auto rep = cellwise_report(samples, cells, 1.0);
        // Cell (first quadrant, band (0,1]) has zero variance but positive
        // mass: its variance z-score diverges with the sample count.
        double worst = 0.0;
        for (const auto& c : rep.cells) worst = std::max(worst, std::abs(c.z_var));
        CHECK(worst > 10.0);
        CHECK_FALSE(rep.pass);
    }

    SECTION("serialization carries one row per cell") {
        Rng eng = make_engine({717, 1});
        std::vector<MarkedConfiguration> samples;
        for (int i = 0; i < 10000; ++i) samples.push_back(sample_limit_process(eng));
        const auto rep = cellwise_report(samples, cells, 1.0);
        const std::string csv = rep.to_csv();
        const std::string json = rep.to_json();
        // Header + one line per cell.
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + static_cast<long>(cells.size()));
        CHECK(json.find("\"count_tv\"") != std::string::npos);
        CHECK(json.find("\"max_abs_z\"") != std::string::npos);
        CHECK(json.find("\"cells\"") != std::string::npos);
    }
}
