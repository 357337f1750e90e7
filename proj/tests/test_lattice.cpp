#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rcmlab/lattice.hpp"

using namespace rcmlab;

TEST_CASE("1-d full line of radius 2 has 5 sites") {
    SiteIndex lat({.d1 = 0, .d2 = 1, .L = 2});
    CHECK(lat.size() == 5);
    // every coordinate in [-2, 2] present exactly once
    for (int c = -2; c <= 2; ++c) CHECK(lat.index_of({c}) >= 0);
    CHECK(lat.index_of({3}) == -1);
}

TEST_CASE("half-space times line product count") {
    SiteIndex lat({.d1 = 1, .d2 = 1, .L = 2});
    CHECK(lat.size() == 3 * 5);
    CHECK(lat.index_of({-1, 0}) == -1); // half-space factor has no negatives
    CHECK(lat.index_of({0, -2}) >= 0);
}

TEST_CASE("metric axioms and integer floor") {
    SiteIndex lat({.d1 = 0, .d2 = 2, .L = 4});
    const int o = lat.origin();
    CHECK(lat.distance(o, o) == 0.0);
    for (int i = 0; i < lat.size(); ++i) {
        if (i == o) continue;
        CHECK(lat.distance(o, i) >= 1.0);
        CHECK(lat.distance(o, i) == lat.distance(i, o));
    }
}

TEST_CASE("euclidean ball matches brute-force count") {
    SiteIndex lat({.d1 = 0, .d2 = 2, .L = 8});
    const int o = lat.origin();
    auto ball = lat.ball(o, 3.0);
    // oracle: exhaustive count over integer coordinates
    int count = 0;
    for (int a = -8; a <= 8; ++a)
        for (int b = -8; b <= 8; ++b)
            if (a * a + b * b <= 9) ++count;
    CHECK(static_cast<int>(ball.size()) == count);
}

TEST_CASE("graph metric is the l1 distance") {
    SiteIndex lat({.d1 = 0, .d2 = 2, .L = 4, .metric = Metric::graph});
    int a = lat.index_of({1, -2});
    int b = lat.index_of({-1, 1});
    CHECK(lat.distance(a, b) == 5.0);
}

TEST_CASE("torus wraps full factors") {
    SiteIndex lat({.d1 = 0, .d2 = 1, .L = 4, .boundary = Boundary::torus});
    int a = lat.index_of({-4});
    int b = lat.index_of({4});
    CHECK(lat.distance(a, b) == 1.0); // 9 sites around the ring
}

TEST_CASE("torus with half-space factors is rejected") {
    CHECK_THROWS(SiteIndex({.d1 = 1, .d2 = 1, .L = 4, .boundary = Boundary::torus}));
}

TEST_CASE("site cap is enforced") {
    CHECK_THROWS(SiteIndex({.d1 = 0, .d2 = 2, .L = 100}, 16384));
    CHECK_NOTHROW(SiteIndex({.d1 = 0, .d2 = 2, .L = 100}, 50000));
}
