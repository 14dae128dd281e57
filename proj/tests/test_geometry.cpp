#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "steinpp/geometry.hpp"

using namespace steinpp;

TEST_CASE("torus_distance wraps coordinates") {
    CHECK(torus_distance(TorusPoint{0.5}, TorusPoint{0.5}) == 0.0);
    // per-coordinate difference 0.8 wraps to 0.2
    CHECK(torus_distance(TorusPoint{0.1, 0.1}, TorusPoint{0.9, 0.9}) ==
          Catch::Approx(0.28284271247461901).epsilon(1e-14));
    // antipodal in every coordinate
    CHECK(torus_distance(TorusPoint{0.0, 0.0, 0.0}, TorusPoint{0.5, 0.5, 0.5}) ==
          Catch::Approx(std::sqrt(0.75)).epsilon(1e-14));
    CHECK_THROWS_AS(torus_distance(TorusPoint{0.1}, TorusPoint{0.1, 0.2}), DimensionMismatch);
}

TEST_CASE("torus_distance satisfies the triangle inequality") {
    std::mt19937_64 g(12345);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 10000; ++rep) {
        const int d = 1 + static_cast<int>(g() % 3);
        TorusPoint a(d), b(d), c(d);
        for (int i = 0; i < d; ++i) { a[i] = u(g); b[i] = u(g); c[i] = u(g); }
        const double ab = torus_distance(a, b);
        const double bc = torus_distance(b, c);
        const double ac = torus_distance(a, c);
        REQUIRE(ac <= ab + bc + 1e-12);
        REQUIRE(ab >= 0.0);
        REQUIRE(torus_distance(a, b) == torus_distance(b, a));
    }
}

TEST_CASE("torus_lift unwraps around the anchor") {
    // d=1: 0.98 sits at -0.02 relative to anchor 0.0
    const auto lifted = torus_lift({TorusPoint{0.98}, TorusPoint{0.02}}, TorusPoint{0.0});
    REQUIRE(lifted.size() == 2);
    CHECK(lifted[0][0] == Catch::Approx(-0.02).margin(1e-15));
    CHECK(lifted[1][0] == Catch::Approx(0.02).margin(1e-15));

    // lifting preserves pairwise distances (Euclidean after lift == torus before)
    std::mt19937_64 g(99);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    std::uniform_real_distribution<double> ua(0.0, 1.0);
    for (int rep = 0; rep < 2000; ++rep) {
        const int d = 1 + static_cast<int>(g() % 3);
        TorusPoint anchor(d);
        for (int i = 0; i < d; ++i) anchor[i] = ua(g);
        std::vector<TorusPoint> pts;
        for (int j = 0; j < 3; ++j) {
            TorusPoint p(d);
            for (int i = 0; i < d; ++i) p[i] = wrap_unit(anchor[i] + u(g));
            pts.push_back(p);
        }
        const auto lift = torus_lift(pts, anchor);
        for (std::size_t a = 0; a < pts.size(); ++a)
            for (std::size_t b = a + 1; b < pts.size(); ++b) {
                double e2 = 0.0;
                for (int i = 0; i < d; ++i) {
                    const double dd = lift[a][i] - lift[b][i];
                    e2 += dd * dd;
                }
                REQUIRE(std::sqrt(e2) ==
                        Catch::Approx(torus_distance(pts[a], pts[b])).margin(1e-12));
            }
    }

    CHECK_THROWS_AS(torus_lift({TorusPoint{0.3}}, TorusPoint{0.0}), LiftAmbiguous);
}

TEST_CASE("ball_volume closed forms") {
    CHECK(ball_volume(2, 0.0) == 0.0);
    CHECK(ball_volume(1, 0.3) == Catch::Approx(0.6).epsilon(1e-14));
    CHECK(ball_volume(2, 0.1) == Catch::Approx(M_PI * 0.01).epsilon(1e-14));
    CHECK(ball_volume(3, 0.2) == Catch::Approx(4.0 * M_PI / 3.0 * 0.008).epsilon(1e-14));
    // omega_4 = pi^2/2
    CHECK(ball_volume(4, 0.25) ==
          Catch::Approx(M_PI * M_PI / 2.0 * std::pow(0.25, 4)).epsilon(1e-13));
    CHECK_THROWS_AS(ball_volume(2, 0.5), BallTooLarge);
    CHECK_THROWS_AS(ball_volume(2, -0.1), Error);
}

TEST_CASE("circumsphere of a pair is the midpoint") {
    const auto cs = circumsphere({TorusPoint{0.1, 0.1}, TorusPoint{0.1, 0.2}});
    REQUIRE(cs.has_value());
    CHECK(cs->center[0] == Catch::Approx(0.1).margin(1e-14));
    CHECK(cs->center[1] == Catch::Approx(0.15).margin(1e-14));
    CHECK(cs->radius == Catch::Approx(0.05).epsilon(1e-13));
    CHECK(cs->interior);
}

TEST_CASE("circumsphere of a right triangle sits on the hypotenuse") {
    const auto cs = circumsphere(
        {TorusPoint{0.4, 0.4}, TorusPoint{0.6, 0.4}, TorusPoint{0.4, 0.6}});
    REQUIRE(cs.has_value());
    CHECK(cs->center[0] == Catch::Approx(0.5).margin(1e-13));
    CHECK(cs->center[1] == Catch::Approx(0.5).margin(1e-13));
    CHECK(cs->radius == Catch::Approx(0.1 * std::sqrt(2.0)).epsilon(1e-12));
    CHECK_FALSE(cs->interior); // circumcenter on the hull boundary
}

TEST_CASE("circumsphere of an equilateral triangle") {
    const double s = 0.1;
    const double h = s * std::sqrt(3.0) / 2.0;
    const auto cs = circumsphere(
        {TorusPoint{0.3, 0.3}, TorusPoint{0.3 + s, 0.3}, TorusPoint{0.3 + s / 2.0, 0.3 + h}});
    REQUIRE(cs.has_value());
    CHECK(cs->radius == Catch::Approx(s / std::sqrt(3.0)).epsilon(1e-12));
    CHECK(cs->interior);
}

TEST_CASE("circumsphere handles wraparound") {
    const auto cs = circumsphere(
        {TorusPoint{0.95, 0.95}, TorusPoint{0.05, 0.95}, TorusPoint{0.0, 0.05}});
    REQUIRE(cs.has_value());
    for (const auto& p : {TorusPoint{0.95, 0.95}, TorusPoint{0.05, 0.95}, TorusPoint{0.0, 0.05}}) {
        CHECK(torus_distance(cs->center, p) ==
              Catch::Approx(cs->radius).margin(1e-12 * std::max(1.0, cs->radius)));
    }
    for (double c : cs->center) {
        CHECK(c >= 0.0);
        CHECK(c < 1.0);
    }
}

TEST_CASE("degenerate tuples have no circumsphere") {
    // repeated point
    CHECK_FALSE(circumsphere({TorusPoint{0.1, 0.1}, TorusPoint{0.1, 0.1}}).has_value());
    // collinear triple
    CHECK_FALSE(circumsphere(
                    {TorusPoint{0.1, 0.1}, TorusPoint{0.2, 0.2}, TorusPoint{0.3, 0.3}})
                    .has_value());
    // nearly collinear: radius blows past the embedding bound
    CHECK_FALSE(circumsphere(
                    {TorusPoint{0.1, 0.1}, TorusPoint{0.3, 0.1}, TorusPoint{0.2, 0.1 + 1e-9}})
                    .has_value());
}

TEST_CASE("circumsphere equidistance on random tuples") {
    std::mt19937_64 g(4242);
    std::uniform_real_distribution<double> ua(0.0, 1.0);
    std::uniform_real_distribution<double> uo(-0.1, 0.1);
    int accepted = 0;
    for (int rep = 0; rep < 4000; ++rep) {
        const int d = 2 + static_cast<int>(g() % 2);
        const int m = 2 + static_cast<int>(g() % d); // tuple size <= d+1
        TorusPoint anchor(d);
        for (int i = 0; i < d; ++i) anchor[i] = ua(g);
        std::vector<TorusPoint> tuple;
        for (int j = 0; j < m; ++j) {
            TorusPoint p(d);
            for (int i = 0; i < d; ++i) p[i] = wrap_unit(anchor[i] + uo(g));
            tuple.push_back(p);
        }
        const auto cs = circumsphere(tuple);
        if (!cs) continue;
        ++accepted;
        for (const auto& p : tuple)
            REQUIRE(std::abs(torus_distance(cs->center, p) - cs->radius) <=
                    1e-12 * std::max(1.0, cs->radius));
    }
    REQUIRE(accepted > 3000); // random tuples are almost never degenerate
}
