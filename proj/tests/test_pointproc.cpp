#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <vector>

#include "steinpp/geometry.hpp"
#include "steinpp/intensity.hpp"
#include "steinpp/parallel.hpp"
#include "steinpp/pointproc.hpp"
#include "steinpp/stats.hpp"

using namespace steinpp;

namespace {

IntensityMeasure cosine1d_scaled4() {
    return IntensityMeasure::general(
               1, [](std::span<const double> z) { return 1.0 + 0.5 * std::cos(2.0 * M_PI * z[0]); },
               0.5, 1.5)
        .scaled(4.0);
}

// Independent reference route: full sort of all torus distances.
std::vector<double> brute_distances(std::span<const double> x, const PointConfiguration& omega,
                                    bool exclude_position) {
    std::vector<double> ds;
    for (std::size_t i = 0; i < omega.size(); ++i) {
        const double dist = torus_distance(x, omega.point(i));
        if (exclude_position && dist == 0.0) continue;
        ds.push_back(dist);
    }
    std::sort(ds.begin(), ds.end());
    return ds;
}

std::size_t brute_count(std::span<const double> x, const PointConfiguration& omega, double r,
                        bool exclude_position) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < omega.size(); ++i) {
        const double dist = torus_distance(x, omega.point(i));
        if (exclude_position && dist == 0.0) continue;
        if (dist <= r) ++c;
    }
    return c;
}

} // namespace

TEST_CASE("poisson sampler: zero mass gives empty configurations") {
    const auto K = IntensityMeasure::constant(2, 0.0);
    for (std::uint64_t s = 0; s < 32; ++s) {
        const auto cfg = sample_poisson(K, RngSpec{11, s});
        CHECK(cfg.size() == 0);
        CHECK(cfg.dim() == 2);
    }
}

TEST_CASE("poisson count moments match the target law") {
    const auto K = IntensityMeasure::constant(2, 5.0);
    const std::size_t reps = 100000;
    std::vector<double> counts(reps);
    for (std::size_t r = 0; r < reps; ++r)
        counts[r] = static_cast<double>(sample_poisson(K, RngSpec{2024, r}).size());
    const auto s = summarize(counts);
    // Poisson(5): mean 5 within 3*sqrt(5/1e5); variance 5 within
    // 3*sqrt((mu4-sigma^4)/1e5) with mu4 = 5 + 3*25 = 80.
    CHECK(std::abs(s.mean - 5.0) <= 0.0212132);
    CHECK(std::abs(s.var - 5.0) <= 0.0703562);
}

TEST_CASE("poisson locations are uniform for constant densities") {
    const auto K = IntensityMeasure::constant(2, 20.0);
    const std::size_t reps = 20000;
    double in_half = 0.0, total = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
        const auto cfg = sample_poisson(K, RngSpec{7, r});
        total += static_cast<double>(cfg.size());
        for (std::size_t i = 0; i < cfg.size(); ++i)
            if (cfg.point(i)[0] < 0.5) in_half += 1.0;
    }
    // in_half ~ Poisson(10 * reps) = Poisson(2e5)
    CHECK(std::abs(in_half - 10.0 * static_cast<double>(reps)) <=
          4.0 * std::sqrt(10.0 * static_cast<double>(reps)));
    CHECK(std::abs(total - 20.0 * static_cast<double>(reps)) <=
          4.0 * std::sqrt(20.0 * static_cast<double>(reps)));
}

TEST_CASE("void probabilities match closed forms") {
    SECTION("constant intensity") {
        // P(no point of eta in B_0.25(x)) = exp(-3*pi*0.0625) = 0.55485491015985344
        const auto K = IntensityMeasure::constant(2, 3.0);
        const TorusPoint x{0.37, 0.81};
        const std::size_t reps = 100000;
        double voids = 0.0;
        for (std::size_t r = 0; r < reps; ++r) {
            const auto cfg = sample_poisson(K, RngSpec{501, r});
            if (brute_count(x, cfg, 0.25, false) == 0) voids += 1.0;
        }
        const double p = voids / static_cast<double>(reps);
        CHECK(std::abs(p - 0.55485491015985344) <= 4.0 * 0.00157159);
    }
    SECTION("nonuniform intensity sampled by rejection") {
        // K(B_0.2(0.3)) = 4*(0.4 + 0.5*(sin(pi) - sin(0.2*pi))/(2*pi))
        //              = 1.4129021432422724; void probability 0.24343577152071985
        const auto K = cosine1d_scaled4();
        const double mass = ball_measure(K, TorusPoint{0.3}, 0.2);
        CHECK(mass == Catch::Approx(1.4129021432422724).margin(2e-5));
        const TorusPoint x{0.3};
        const std::size_t reps = 100000;
        double voids = 0.0;
        for (std::size_t r = 0; r < reps; ++r) {
            const auto cfg = sample_poisson(K, RngSpec{502, r});
            if (brute_count(x, cfg, 0.2, false) == 0) voids += 1.0;
        }
        const double p = voids / static_cast<double>(reps);
        CHECK(std::abs(p - 0.24343577152071985) <= 4.0 * 0.00135711);
    }
}

TEST_CASE("binomial sampler count is deterministic") {
    const auto Q = IntensityMeasure::constant(3, 1.0);
    CHECK(sample_binomial(0, Q, RngSpec{1, 0}).size() == 0);
    for (std::uint64_t s = 0; s < 200; ++s) CHECK(sample_binomial(7, Q, RngSpec{1, s}).size() == 7);
}

TEST_CASE("binomial sampler requires a probability measure") {
    CHECK_THROWS_AS(sample_binomial(5, IntensityMeasure::constant(2, 1.0 + 2e-9), RngSpec{0, 0}),
                    NotAProbability);
    CHECK_THROWS_AS(sample_binomial(5, IntensityMeasure::constant(2, 50.0), RngSpec{0, 0}),
                    NotAProbability);
    // rescaling a non-probability measure to unit mass is accepted
    CHECK(sample_binomial(5, IntensityMeasure::constant(2, 50.0).scaled(0.02), RngSpec{0, 0})
              .size() == 5);
}

TEST_CASE("binomial box counts have the right mean") {
    const auto Q = IntensityMeasure::constant(2, 1.0);
    const std::size_t reps = 100000;
    double in_box = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
        const auto cfg = sample_binomial(10, Q, RngSpec{77, r});
        for (std::size_t i = 0; i < cfg.size(); ++i)
            if (cfg.point(i)[0] < 0.5) in_box += 1.0;
    }
    // mean count in [0,0.5]x[0,1] for n=10 uniform points: 5 +- 3*sqrt(2.5/1e5)
    CHECK(std::abs(in_box / static_cast<double>(reps) - 5.0) <= 0.015);
}

TEST_CASE("rejection-sampled binomial matches box masses") {
    const auto Q = IntensityMeasure::general(
        1, [](std::span<const double> z) { return 1.0 + 0.5 * std::cos(2.0 * M_PI * z[0]); }, 0.5,
        1.5);
    REQUIRE(std::abs(Q.total_mass() - 1.0) <= 1e-9);
    const auto cfg = sample_binomial(20000, Q, RngSpec{91, 0});
    double in_box = 0.0;
    for (std::size_t i = 0; i < cfg.size(); ++i)
        if (cfg.point(i)[0] < 0.25) in_box += 1.0;
    // Q([0,0.25]) = 0.25 + 0.5/(2*pi): expected 6591.55, binomial 4-SE band 265.906
    CHECK(std::abs(in_box - 6591.5494309189541) <= 265.906);
}

TEST_CASE("configurations serialize and parse exactly") {
    PointConfiguration cfg(3);
    cfg.push_back({0.1, 0.2, 0.3});
    cfg.push_back({0.99999999999999989, 4.9406564584124654e-324, 0.5});
    cfg.push_back({0.1, 0.2, 0.3}); // duplicate preserved
    std::ostringstream os;
    write_points(os, cfg);
    const std::string text = os.str();
    CHECK(text.substr(0, 8) == "d=3 n=3\n");
    std::istringstream is(text);
    const auto back = read_points(is);
    REQUIRE(back.dim() == 3);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (int a = 0; a < 3; ++a) CHECK(back.point(i)[a] == cfg.point(i)[a]);

    std::ostringstream os2;
    write_points(os2, PointConfiguration(2));
    std::istringstream is2(os2.str());
    const auto empty = read_points(is2);
    CHECK(empty.dim() == 2);
    CHECK(empty.size() == 0);

    std::istringstream bad1("d=2 n=x\n");
    CHECK_THROWS_AS(read_points(bad1), IoError);
    std::istringstream bad2("d=2 n=2\n0.1 0.2\n");
    CHECK_THROWS_AS(read_points(bad2), IoError);
    std::istringstream bad3("d=2 n=1\n0.1 zebra\n");
    CHECK_THROWS_AS(read_points(bad3), IoError);
}

TEST_CASE("knn distance on the hand-checked line example") {
    PointConfiguration omega(1);
    omega.push_back({0.1});
    omega.push_back({0.3});
    omega.push_back({0.9});
    const TorusPoint x{0.0};
    // distances: 0.1, 0.3, and 1-0.9 (wraparound)
    const double dwrap = torus_distance(x, TorusPoint{0.9});
    CHECK(knn_distance(x, omega, 1, true) == std::min(0.1, dwrap));
    CHECK(knn_distance(x, omega, 2, true) == 0.1);
    CHECK(knn_distance(x, omega, 3, true) == 0.3);
    CHECK_THROWS_AS(knn_distance(x, omega, 4, true), NotEnoughPoints);

    PointConfiguration two(2);
    two.push_back({0.2, 0.2});
    two.push_back({0.6, 0.7});
    CHECK(knn_distance(two.point(0), two, 1, true) ==
          torus_distance(two.point(0), two.point(1)));
    CHECK_THROWS_AS(knn_distance(two.point(0), two, 2, true), NotEnoughPoints);
    CHECK(knn_distance(two.point(0), two, 2, false) ==
          torus_distance(two.point(0), two.point(1)));
}

TEST_CASE("grid knn and ball counts match brute force") {
    auto eng = make_engine(RngSpec{424242, 0});
    const int forced_cells[] = {0, 1, 2, 3, 5};
    std::size_t knn_checks = 0, count_checks = 0;
    for (int trial = 0; trial < 260; ++trial) {
        const int d = 1 + trial % 3;
        std::size_t n = 1 + static_cast<std::size_t>(runif(eng) * 59.0);
        if (trial % 13 == 0) n = 500 + static_cast<std::size_t>(runif(eng) * 500.0);
        PointConfiguration cfg(d);
        std::vector<double> p(d);
        for (std::size_t i = 0; i < n; ++i) {
            for (int a = 0; a < d; ++a) p[a] = runif(eng);
            cfg.push_back(p);
        }
        if (trial % 2 == 0 && n >= 2) {
            // inject an exact duplicate of an existing point
            const std::size_t src = static_cast<std::size_t>(runif(eng) * cfg.size());
            std::vector<double> dup(cfg.point(src).begin(), cfg.point(src).end());
            cfg.push_back(dup);
        }
        const GridIndex idx(cfg, forced_cells[trial % 5]);
        for (int q = 0; q < 4; ++q) {
            std::vector<double> x(d);
            if (q == 2) {
                const std::size_t src = static_cast<std::size_t>(runif(eng) * cfg.size());
                x.assign(cfg.point(src).begin(), cfg.point(src).end());
            } else {
                for (int a = 0; a < d; ++a) x[a] = runif(eng);
            }
            const bool excl = (q % 2 == 0);
            const auto ds = brute_distances(x, cfg, excl);
            if (!ds.empty()) {
                const std::size_t k =
                    1 + static_cast<std::size_t>(runif(eng) * std::min<std::size_t>(6, ds.size()));
                if (k <= ds.size()) {
                    CHECK(idx.knn_distance(x, k, excl) == ds[k - 1]);
                    ++knn_checks;
                }
                CHECK(idx.knn_distance(x, ds.size(), excl) == ds.back());
            }
            CHECK_THROWS_AS(idx.knn_distance(x, ds.size() + 1, excl), NotEnoughPoints);
            const double r = (q == 3) ? 0.5 + runif(eng) * 0.4 : runif(eng) * 0.45;
            const std::size_t bc = brute_count(x, cfg, r, excl);
            CHECK(idx.count_in_ball(x, r, excl) == bc);
            CHECK(idx.ball_count_at_least(x, r, bc, excl));
            CHECK_FALSE(idx.ball_count_at_least(x, r, bc + 1, excl));
            ++count_checks;
        }
    }
    CHECK(knn_checks >= 1000);
    CHECK(count_checks >= 1000);
}

TEST_CASE("samplers are deterministic in the rng spec") {
    const auto K = cosine1d_scaled4().scaled(3.0);
    const auto a = sample_poisson(K, RngSpec{99, 4});
    const auto b = sample_poisson(K, RngSpec{99, 4});
    REQUIRE(a.size() == b.size());
    bool identical = true;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.point(i)[0] != b.point(i)[0]) identical = false;
    CHECK(identical);
    const auto c = sample_poisson(K, RngSpec{99, 5});
    const bool differs = c.size() != a.size() || (a.size() > 0 && c.point(0)[0] != a.point(0)[0]);
    CHECK(differs);

    const auto Q = IntensityMeasure::constant(2, 1.0);
    const auto u = sample_binomial(40, Q, RngSpec{123, 6});
    const auto v = sample_binomial(40, Q, RngSpec{123, 6});
    bool same = true;
    for (std::size_t i = 0; i < 40; ++i)
        for (int axis = 0; axis < 2; ++axis)
            if (u.point(i)[axis] != v.point(i)[axis]) same = false;
    CHECK(same);
}

TEST_CASE("mecke identity holds for counting test functions") {
    SECTION("unit test function measures total mass") {
        const auto K = IntensityMeasure::constant(1, 5.0);
        const auto rep = mecke_check(
            K, [](std::span<const double>, const PointConfiguration&) { return 1.0; }, 4000,
            RngSpec{31, 0});
        CHECK(rep.pass);
        CHECK(std::abs(rep.z) <= 4.0);
        CHECK(std::abs(rep.lhs - 5.0) <= 4.0 * rep.lhs_se);
        CHECK(std::abs(rep.rhs - 5.0) <= 4.0 * rep.rhs_se);
        CHECK(rep.replicates == 4000);
    }
    SECTION("neighbour-count test function hits 25*pi") {
        const auto K = IntensityMeasure::constant(2, 50.0);
        const auto f = [](std::span<const double> x, const PointConfiguration& omega) {
            return static_cast<double>(brute_count(x, omega, 0.1, false)) - 1.0;
        };
        const auto rep = mecke_check(K, f, 1500, RngSpec{32, 0});
        CHECK(rep.pass);
        // both sides estimate mass^2 * ball volume = 2500*pi*0.01 = 25*pi
        CHECK(std::abs(rep.lhs - 78.539816339744831) <= 4.0 * rep.lhs_se);
        CHECK(std::abs(rep.rhs - 78.539816339744831) <= 4.0 * rep.rhs_se);
    }
    SECTION("zero mass gives exact zeros") {
        const auto K = IntensityMeasure::constant(2, 0.0);
        const auto rep = mecke_check(
            K, [](std::span<const double>, const PointConfiguration&) { return 1.0; }, 100,
            RngSpec{33, 0});
        CHECK(rep.lhs == 0.0);
        CHECK(rep.rhs == 0.0);
        CHECK(rep.pass);
    }
}

TEST_CASE("mecke check is reproducible across thread counts") {
    const auto K = IntensityMeasure::constant(2, 12.0);
    const auto f = [](std::span<const double> x, const PointConfiguration& omega) {
        return static_cast<double>(brute_count(x, omega, 0.15, false));
    };
    const auto one = mecke_check(K, f, 600, RngSpec{55, 0}, 1);
    const auto four = mecke_check(K, f, 600, RngSpec{55, 0}, 4);
    CHECK(one.lhs == four.lhs);
    CHECK(one.rhs == four.rhs);
    CHECK(one.lhs_se == four.lhs_se);
    CHECK(one.rhs_se == four.rhs_se);
    CHECK(one.z == four.z);
}

TEST_CASE("replicate runner visits every index exactly once") {
    const std::size_t reps = 1000;
    std::vector<std::atomic<int>> hits(reps);
    for (auto& h : hits) h.store(0);
    run_replicates(reps, 4, [&](std::size_t r) { hits[r].fetch_add(1); });
    bool all_once = true;
    for (auto& h : hits)
        if (h.load() != 1) all_once = false;
    CHECK(all_once);

    CHECK_THROWS_AS(run_replicates(100, 3,
                                   [&](std::size_t r) {
                                       if (r == 57) throw ConfigError("boom");
                                   }),
                    ConfigError);
}
