#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "dfmk/pmf.hpp"

using namespace dfmk;

TEST_CASE("validated accepts unit-sum weights and rejects drift") {
    CHECK_NOTHROW(Pmf::validated({0.25, 0.75}));
    CHECK_NOTHROW(Pmf::validated({0.5, 0.5 + 5e-13}));
    CHECK_THROWS_AS(Pmf::validated({0.5, 0.6}), std::invalid_argument);
    CHECK_THROWS_AS(Pmf::validated({0.5, 0.5 + 1e-11}), std::invalid_argument);
}

TEST_CASE("validated rejects malformed entries") {
    CHECK_THROWS_AS(Pmf::validated({}), std::invalid_argument);
    CHECK_THROWS_AS(Pmf::validated({1.5, -0.5}), std::invalid_argument);
    CHECK_THROWS_AS(Pmf::validated({std::nan(""), 1.0}), std::invalid_argument);
}

TEST_CASE("normalized rescales and rejects zero mass") {
    const Pmf p = Pmf::normalized({2.0, 6.0});
    CHECK(p[0] == Catch::Approx(0.25));
    CHECK(p[1] == Catch::Approx(0.75));
    CHECK_THROWS_AS(Pmf::normalized({0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("uniform and delta factories") {
    const Pmf u = Pmf::uniform(4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(u[i] == 0.25);
    const Pmf d = Pmf::delta(3, 1);
    CHECK(d[0] == 0.0);
    CHECK(d[1] == 1.0);
    CHECK(d[2] == 0.0);
    CHECK_THROWS_AS(Pmf::delta(3, 3), std::invalid_argument);
    CHECK_THROWS_AS(Pmf::uniform(0), std::invalid_argument);
}

TEST_CASE("tv distance reference values") {
    const Pmf p = Pmf::validated({0.5, 0.5});
    CHECK(tv_distance(p, p) == 0.0);
    CHECK(tv_distance(Pmf::delta(2, 0), Pmf::delta(2, 1)) == 1.0);
    CHECK(tv_distance(p, Pmf::delta(2, 0)) == Catch::Approx(0.5));
    CHECK_THROWS_AS(tv_distance(p, Pmf::uniform(3)), std::invalid_argument);
}

TEST_CASE("kl divergence basics") {
    const Pmf p = Pmf::validated({0.3, 0.7});
    CHECK(kl_divergence(p, p) == Catch::Approx(0.0).margin(1e-14));
    // Closed form for two binary pmfs.
    const Pmf q = Pmf::validated({0.5, 0.5});
    const double expected = 0.3 * std::log(0.3 / 0.5) + 0.7 * std::log(0.7 / 0.5);
    CHECK(kl_divergence(p, q) == Catch::Approx(expected).epsilon(1e-10));
    CHECK(kl_divergence(p, q) >= 0.0);
    // Empirical zero in q stays finite thanks to the floor.
    CHECK(std::isfinite(kl_divergence(p, Pmf::delta(2, 0))));
    CHECK_THROWS_AS(kl_divergence(p, Pmf::uniform(3)), std::invalid_argument);
}

TEST_CASE("kl nonnegative on random pairs") {
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int k = 0; k < 200; ++k) {
        std::vector<double> a(5), b(5);
        for (int i = 0; i < 5; ++i) {
            a[i] = u(gen);
            b[i] = u(gen);
        }
        CHECK(kl_divergence(Pmf::normalized(a), Pmf::normalized(b)) >= 0.0);
    }
}
