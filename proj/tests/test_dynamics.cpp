#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "steinpp/discrepancy.hpp"
#include "steinpp/dynamics.hpp"
#include "steinpp/intensity.hpp"
#include "steinpp/pointproc.hpp"
#include "steinpp/rng.hpp"
#include "steinpp/stats.hpp"

using namespace steinpp;

namespace {

PointConfiguration config_from(std::initializer_list<std::initializer_list<double>> pts) {
    PointConfiguration cfg(2);
    for (const auto& p : pts) cfg.push_back(std::span<const double>(p.begin(), p.size()));
    return cfg;
}

} // namespace

TEST_CASE("horizon zero returns the initial configuration unchanged", "[dynamics]") {
    const auto M = IntensityMeasure::constant(2, 5.0);
    const PointConfiguration w0 = config_from({{0.1, 0.2}, {0.5, 0.5}, {0.9, 0.05}});
    Rng eng = make_engine({101, 0});
    const PointConfiguration w = simulate(w0, M, 0.0, eng);
    REQUIRE(w.size() == w0.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto a = w.point(i);
        const auto b = w0.point(i);
        CHECK(a[0] == b[0]);
        CHECK(a[1] == b[1]);
    }
}

TEST_CASE("pure death matches binomial thinning", "[dynamics]") {
    // With no births every initial point survives to time s independently
    // with probability exp(-s), so the count is Binomial(m, exp(-s)).
    const auto M0 = IntensityMeasure::constant(2, 0.0);
    const PointConfiguration w0 = config_from(
        {{0.1, 0.1}, {0.3, 0.2}, {0.5, 0.9}, {0.7, 0.4}, {0.9, 0.6}, {0.2, 0.8}});
    const unsigned m = 6;
    const double s = 0.7;
    const double p = std::exp(-s);

    const std::size_t R = 100000;
    Rng eng = make_engine({202, 0});
    std::vector<double> counts(R);
    for (std::size_t r = 0; r < R; ++r) {
        const PointConfiguration w = simulate(w0, M0, s, eng);
        REQUIRE(w.size() <= w0.size()); // deaths only: pathwise domination
        counts[r] = static_cast<double>(w.size());
    }
    const Summary c = summarize(counts);
    CHECK(std::abs(c.mean - static_cast<double>(m) * p) <= 4.0 * c.se);

    // exact distribution: empirical law vs the binomial pmf
    std::vector<double> freq(m + 1, 0.0);
    for (const double v : counts) freq[static_cast<std::size_t>(v)] += 1.0;
    double tv = 0.0;
    for (unsigned k = 0; k <= m; ++k)
        tv += std::abs(freq[k] / static_cast<double>(R) - binomial_pmf(k, m, p));
    tv *= 0.5;
    CHECK(tv < 0.02);
}

TEST_CASE("immigration from empty matches the birth-death count law", "[dynamics]") {
    // Births at rate 5 with unit per-particle death rate: the count at time
    // t is Poisson(5 (1 - exp(-t))).
    const auto M = IntensityMeasure::constant(2, 5.0);
    const PointConfiguration empty(2);
    const double horizon = 10.0;
    const double mean = 5.0 * (1.0 - std::exp(-horizon));

    const std::size_t R = 100000;
    Rng eng = make_engine({303, 0});
    std::vector<double> counts(R);
    for (std::size_t r = 0; r < R; ++r)
        counts[r] = static_cast<double>(simulate(empty, M, horizon, eng).size());
    const Summary c = summarize(counts);
    CHECK(std::abs(c.mean - mean) <= 4.0 * c.se);

    // exact TV against the Poisson law, capped at mean + 10 sqrt(mean)
    const auto cap = static_cast<std::size_t>(mean + 10.0 * std::sqrt(mean));
    std::vector<double> freq(cap + 1, 0.0);
    double over = 0.0;
    for (const double v : counts) {
        const auto k = static_cast<std::size_t>(v);
        if (k <= cap)
            freq[k] += 1.0;
        else
            over += 1.0;
    }
    double tv = 0.0;
    for (std::size_t k = 0; k <= cap; ++k)
        tv += std::abs(freq[k] / static_cast<double>(R) -
                       poisson_pmf(static_cast<unsigned>(k), mean));
    tv *= 0.5;
    tv += 0.5 * over / static_cast<double>(R);
    tv += 0.5 * (1.0 - poisson_cdf(static_cast<unsigned>(cap), mean));
    CHECK(tv < 0.02);
}

TEST_CASE("coupled chains started equal stay identical", "[dynamics]") {
    const auto M = IntensityMeasure::constant(2, 4.0);
    const PointConfiguration w0 = config_from(
        {{0.15, 0.25}, {0.45, 0.85}, {0.65, 0.35}, {0.95, 0.55}, {0.05, 0.75}});
    for (const double s : {0.5, 2.0}) {
        Rng eng = make_engine({404, static_cast<std::uint64_t>(s * 10)});
        const auto [x1, x2] = simulate_coupled(w0, w0, M, s, eng);
        CHECK(x1.size() == x2.size());
        CHECK(multiset_diff(x1, x2).symmetric() == 0);
    }
}

TEST_CASE("single extra point survives with exponential probability", "[dynamics]") {
    // The only discrepancy point dies at rate 1 independently of everything
    // shared, so the expected symmetric difference at time s is exp(-s).
    const auto M = IntensityMeasure::constant(2, 3.0);
    const PointConfiguration w1 = config_from({{0.2, 0.3}, {0.6, 0.7}});
    PointConfiguration w2 = w1;
    w2.push_back({0.4, 0.9});

    const std::size_t R = 30000;
    std::uint64_t stream = 0;
    for (const double s : {0.5, 1.0, 2.0}) {
        Rng eng = make_engine({505, stream++});
        std::vector<double> delta(R);
        for (std::size_t r = 0; r < R; ++r) {
            const auto [x1, x2] = simulate_coupled(w1, w2, M, s, eng);
            const std::size_t diff = multiset_diff(x1, x2).symmetric();
            REQUIRE(diff <= 1); // the discrepancy never grows
            delta[r] = static_cast<double>(diff);
        }
        const Summary d = summarize(delta);
        INFO("horizon " << s);
        CHECK(std::abs(d.mean - std::exp(-s)) <= 4.0 * d.se);
    }
}

TEST_CASE("long horizons kill every discrepancy", "[dynamics]") {
    const auto M = IntensityMeasure::constant(2, 2.0);
    const PointConfiguration w1 = config_from({{0.2, 0.3}, {0.6, 0.7}, {0.1, 0.9}});
    const PointConfiguration w2 = config_from({{0.2, 0.3}});
    Rng eng = make_engine({606, 0});
    for (int r = 0; r < 2000; ++r) {
        const auto [x1, x2] = simulate_coupled(w1, w2, M, 20.0, eng);
        CHECK(multiset_diff(x1, x2).symmetric() == 0);
    }
}

TEST_CASE("coupled marginals match the single-chain law", "[dynamics]") {
    // The first output of the coupled simulator must be distributed like a
    // plain simulation started from the same configuration.
    const auto M = IntensityMeasure::constant(2, 4.0);
    const PointConfiguration w1 = config_from({{0.2, 0.3}, {0.6, 0.7}, {0.8, 0.1}});
    PointConfiguration w2 = config_from({{0.2, 0.3}, {0.6, 0.7}});
    w2.push_back({0.4, 0.9}); // discrepancy on both sides
    const double s = 1.5;

    const std::size_t R = 30000;
    std::vector<double> single(R), coupled(R);
    Rng e1 = make_engine({707, 0});
    Rng e2 = make_engine({708, 0});
    for (std::size_t r = 0; r < R; ++r) {
        single[r] = static_cast<double>(simulate(w1, M, s, e1).size());
        coupled[r] = static_cast<double>(simulate_coupled(w1, w2, M, s, e2).first.size());
    }
    const Summary a = summarize(single);
    const Summary b = summarize(coupled);
    CHECK(std::abs(a.mean - b.mean) <= 4.0 * std::hypot(a.se, b.se));
}

TEST_CASE("stationarity report from an empty start", "[dynamics]") {
    const auto M = IntensityMeasure::constant(2, 5.0);
    const StationarityReport rep = stationarity_report(M, 10.0, 100000, {808, 0});

    CHECK(rep.reps == 100000);
    CHECK(rep.horizon == 10.0);
    CHECK(rep.mass == 5.0);
    CHECK(rep.target_mean == Catch::Approx(5.0 * (1.0 - std::exp(-10.0))).epsilon(1e-12));

    CHECK(rep.count_tv < 0.02);
    CHECK(rep.max_abs_z < 4.0);
    CHECK(rep.pass);

    // four cells of equal mass, each a thinned Poisson with mean 1.25(1-e^-10)
    REQUIRE(rep.cells.size() == 4);
    for (const auto& cell : rep.cells) {
        CHECK(cell.mass == Catch::Approx(1.25).epsilon(1e-12));
        CHECK(std::abs(cell.z) <= 4.0);
        CHECK(cell.mean == Catch::Approx(1.25 * (1.0 - std::exp(-10.0))).margin(0.02));
    }
}

TEST_CASE("stationarity report with zero-mass intensity", "[dynamics]") {
    const auto M0 = IntensityMeasure::constant(2, 0.0);
    const StationarityReport rep = stationarity_report(M0, 5.0, 2000, {909, 0});
    CHECK(rep.target_mean == 0.0);
    CHECK(rep.count_tv == 0.0);
    CHECK(rep.max_abs_z == 0.0);
    CHECK(rep.pass);
    for (const auto& cell : rep.cells) {
        CHECK(cell.mean == 0.0);
        CHECK(cell.z == 0.0);
    }
}

TEST_CASE("stationarity report is identical across thread counts", "[dynamics]") {
    const auto M = IntensityMeasure::constant(2, 3.0);
    const StationarityReport a = stationarity_report(M, 4.0, 3000, {1010, 0}, 1);
    const StationarityReport b = stationarity_report(M, 4.0, 3000, {1010, 0}, 3);
    CHECK(a.to_json() == b.to_json());
}

TEST_CASE("dynamics operations reject invalid input", "[dynamics]") {
    const auto M = IntensityMeasure::constant(2, 2.0);
    const auto M3 = IntensityMeasure::constant(3, 2.0);
    const PointConfiguration w0 = config_from({{0.5, 0.5}});
    const PointConfiguration w3(3);
    Rng eng = make_engine({1111, 0});

    CHECK_THROWS_AS(simulate(w0, M, -1.0, eng), ConfigError);
    CHECK_THROWS_AS(simulate(w0, M3, 1.0, eng), DimensionMismatch);
    CHECK_THROWS_AS(simulate_coupled(w0, w0, M, -1.0, eng), ConfigError);
    CHECK_THROWS_AS(simulate_coupled(w0, w3, M, 1.0, eng), DimensionMismatch);
    CHECK_THROWS_AS(simulate_coupled(w0, w0, M3, 1.0, eng), DimensionMismatch);
    CHECK_THROWS_AS(stationarity_report(M, -1.0, 2000, {1, 0}), ConfigError);
    CHECK_THROWS_AS(stationarity_report(M, 1.0, 10, {1, 0}), TooFewSamples);
}

TEST_CASE("stationarity report serializes to json", "[dynamics]") {
    const auto M = IntensityMeasure::constant(2, 3.0);
    const StationarityReport rep = stationarity_report(M, 4.0, 2000, {1212, 0});
    const std::string j = rep.to_json();
    for (const char* key : {"\"reps\"", "\"horizon\"", "\"mass\"", "\"target_mean\"",
                            "\"count_tv\"", "\"max_abs_z\"", "\"pass\"", "\"cells\""}) {
        INFO("missing key: " << key);
        CHECK(j.find(key) != std::string::npos);
    }
}
