#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "dfmk/geometry.hpp"

using namespace dfmk;

namespace {

DistanceMatrix binary_distance() { return DistanceMatrix(2, {0.0, 1.0, 1.0, 0.0}); }

// s=3 with d(x, target 0) = (0, 1, 2); the other columns arbitrary but valid.
DistanceMatrix ternary_distance() {
    return DistanceMatrix(3, {0.0, 1.0, 2.0,
                              1.0, 0.0, 1.5,
                              2.0, 1.5, 0.0});
}

DistanceMatrix random_distance(std::size_t s, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    std::vector<double> d(s * s, 0.0);
    for (std::size_t x = 0; x < s; ++x)
        for (std::size_t y = 0; y < s; ++y)
            if (x != y) d[x * s + y] = u(gen);
    return DistanceMatrix(s, std::move(d));
}

} // namespace

TEST_CASE("distance matrix axiom enforcement") {
    CHECK_THROWS_AS(DistanceMatrix(2, {0.0, 1.0, 1.0, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(DistanceMatrix(2, {0.0, 0.0, 1.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(DistanceMatrix(2, {0.0, -1.0, 1.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(DistanceMatrix(1, {0.0}), std::invalid_argument);
    // Duplicate rows (equidistant tokens) are allowed.
    CHECK_NOTHROW(DistanceMatrix(3, {0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0}));
}

TEST_CASE("squared euclidean distances from embeddings") {
    const std::vector<std::vector<double>> emb = {{0.0, 0.0}, {3.0, 4.0}};
    const DistanceMatrix d = DistanceMatrix::from_embeddings(emb, false);
    CHECK(d.at(0, 1) == Catch::Approx(25.0));
    // With l2 normalization the second token becomes (0.6, 0.8).
    const std::vector<std::vector<double>> emb2 = {{1.0, 0.0}, {3.0, 4.0}};
    const DistanceMatrix dn = DistanceMatrix::from_embeddings(emb2, true);
    CHECK(dn.at(0, 1) == Catch::Approx(0.16 + 0.64));
    CHECK_THROWS_AS(DistanceMatrix::from_embeddings({{0.0}, {0.0}}, true), std::invalid_argument);
}

TEST_CASE("gibbs conditional reference values") {
    const DistanceMatrix d2 = binary_distance();
    const Pmf at_zero = gibbs_conditional(d2, 0.0, 1);
    CHECK(at_zero[0] == Catch::Approx(0.5));
    CHECK(at_zero[1] == Catch::Approx(0.5));

    const Pmf at_ln3 = gibbs_conditional(d2, std::log(3.0), 0);
    CHECK(at_ln3[0] == Catch::Approx(0.75).epsilon(1e-12));
    CHECK(at_ln3[1] == Catch::Approx(0.25).epsilon(1e-12));

    // Normalize (1, e^-1, e^-2) directly as the oracle.
    const DistanceMatrix d3 = ternary_distance();
    const double z = 1.0 + std::exp(-1.0) + std::exp(-2.0);
    const Pmf p3 = gibbs_conditional(d3, 1.0, 0);
    CHECK(p3[0] == Catch::Approx(1.0 / z).epsilon(1e-12));
    CHECK(p3[1] == Catch::Approx(std::exp(-1.0) / z).epsilon(1e-12));
    CHECK(p3[2] == Catch::Approx(std::exp(-2.0) / z).epsilon(1e-12));
    CHECK(p3[0] == Catch::Approx(0.66524).margin(5e-6));
    CHECK(p3[1] == Catch::Approx(0.24473).margin(5e-6));
    CHECK(p3[2] == Catch::Approx(0.09003).margin(5e-6));

    CHECK_THROWS_AS(gibbs_conditional(d2, -1.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(gibbs_conditional(d2, 0.0, 2), std::invalid_argument);
}

TEST_CASE("gibbs conditional sums to one and concentrates monotonically") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const DistanceMatrix d = random_distance(6, seed);
        for (std::size_t x1 = 0; x1 < 6; ++x1) {
            double prev = 0.0;
            for (double beta : {0.0, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0, 700.0}) {
                const Pmf p = gibbs_conditional(d, beta, x1);
                double sum = 0.0;
                for (std::size_t x = 0; x < 6; ++x) sum += p[x];
                CHECK(std::abs(sum - 1.0) <= 1e-12);
                CHECK(p[x1] >= prev);
                prev = p[x1];
            }
        }
    }
}

TEST_CASE("gibbs log derivative reference values and zero mean") {
    const DistanceMatrix d2 = binary_distance();
    const auto phi = gibbs_log_derivative(d2, 0.0, 1.0, 1);
    CHECK(phi[0] == Catch::Approx(-0.5));
    CHECK(phi[1] == Catch::Approx(0.5));

    const auto zero = gibbs_log_derivative(d2, 3.0, 0.0, 0);
    CHECK(zero[0] == 0.0);
    CHECK(zero[1] == 0.0);

    // E[d] for the ternary fixture by enumeration, then phi = 2 (E[d] - d).
    const DistanceMatrix d3 = ternary_distance();
    const Pmf p3 = gibbs_conditional(d3, 1.0, 0);
    const double mu = p3[1] * 1.0 + p3[2] * 2.0;
    CHECK(mu == Catch::Approx(0.42479).margin(5e-6));
    const auto phi3 = gibbs_log_derivative(d3, 1.0, 2.0, 0);
    CHECK(phi3[0] == Catch::Approx(2.0 * mu).epsilon(1e-12));
    CHECK(phi3[1] == Catch::Approx(2.0 * (mu - 1.0)).epsilon(1e-12));
    CHECK(phi3[2] == Catch::Approx(2.0 * (mu - 2.0)).epsilon(1e-12));

    // Zero-mean score on random fixtures.
    for (std::uint64_t seed : {4u, 5u}) {
        const DistanceMatrix d = random_distance(5, seed);
        for (double beta : {0.0, 0.7, 3.0}) {
            for (std::size_t x1 = 0; x1 < 5; ++x1) {
                const Pmf p = gibbs_conditional(d, beta, x1);
                const auto phi_r = gibbs_log_derivative(d, beta, 1.3, x1);
                double mean = 0.0;
                for (std::size_t x = 0; x < 5; ++x) mean += p[x] * phi_r[x];
                CHECK(std::abs(mean) <= 1e-10);
            }
        }
    }
}

TEST_CASE("mixture conditional boundaries and blend") {
    const Pmf u4 = Pmf::uniform(4);
    const Pmf at0 = mixture_conditional(u4, 0.0, 2);
    for (std::size_t x = 0; x < 4; ++x) CHECK(at0[x] == Catch::Approx(0.25));
    const Pmf at1 = mixture_conditional(Pmf::validated({0.1, 0.2, 0.3, 0.4}), 1.0, 2);
    CHECK(at1[2] == Catch::Approx(1.0));
    const Pmf half = mixture_conditional(Pmf::uniform(2), 0.5, 0);
    CHECK(half[0] == Catch::Approx(0.75));
    CHECK(half[1] == Catch::Approx(0.25));
    CHECK_THROWS_AS(mixture_conditional(u4, 1.5, 0), std::invalid_argument);
}

TEST_CASE("fisher information of the metric path") {
    const DistanceMatrix d2 = binary_distance();
    CHECK(fisher_information_metric(d2, 0.0, 1) == Catch::Approx(0.25));
    CHECK(fisher_information_metric(d2, 40.0, 1) < 1e-15);

    // E[d^2] and mu^2 for the ternary fixture by enumeration.
    const DistanceMatrix d3 = ternary_distance();
    const Pmf p3 = gibbs_conditional(d3, 1.0, 0);
    const double mu = p3[1] + 2.0 * p3[2];
    const double m2 = p3[1] + 4.0 * p3[2];
    CHECK(m2 == Catch::Approx(0.60485).margin(5e-6));
    CHECK(mu * mu == Catch::Approx(0.18045).margin(5e-6));
    CHECK(fisher_information_metric(d3, 1.0, 0) == Catch::Approx(m2 - mu * mu).epsilon(1e-12));
    // Enumerated value: 0.6048497 - 0.1804457 = 0.4244040.
    CHECK(fisher_information_metric(d3, 1.0, 0) == Catch::Approx(0.42440).margin(5e-6));
}

TEST_CASE("fisher information of the mixture path") {
    CHECK(fisher_information_mixture(0.25, 0.0) == Catch::Approx(3.0));
    CHECK(fisher_information_mixture(0.5, 0.5) == Catch::Approx(4.0 / 3.0));
    // Divergence like (1 - p1)/(1 - kappa) near kappa = 1.
    const double near = fisher_information_mixture(0.25, 1.0 - 1e-9);
    CHECK(near == Catch::Approx(0.75 / 1e-9).epsilon(1e-6));
    CHECK_THROWS_AS(fisher_information_mixture(1.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(fisher_information_mixture(0.5, 1.0), std::invalid_argument);
}

TEST_CASE("fisher-rao speed") {
    const Pmf p = Pmf::validated({0.5, 0.5});
    CHECK(fr_speed(p, {0.0, 0.0}) == 0.0);
    CHECK(fr_speed(p, {0.5, -0.5}) == Catch::Approx(1.0));
    // Mask mixture: speed = kappa_dot * sqrt(1 / ((1-kappa) kappa)) at p1 = 0.
    const double kappa = 0.5;
    const Pmf mix = Pmf::validated({kappa, 1.0 - kappa}); // (target, mask)
    const double speed = fr_speed(mix, {1.0, -1.0});
    CHECK(speed == Catch::Approx(std::sqrt(1.0 / ((1.0 - kappa) * kappa))).epsilon(1e-12));
    CHECK(speed == Catch::Approx(2.0));
    CHECK_THROWS_AS(fr_speed(Pmf::delta(2, 0), {-1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("fr speed matches beta_dot^2 times fisher information") {
    const DistanceMatrix d = random_distance(5, 99);
    for (double beta : {0.2, 1.0, 3.0}) {
        for (std::size_t x1 = 0; x1 < 5; ++x1) {
            const double beta_dot = 1.7;
            const Pmf p = gibbs_conditional(d, beta, x1);
            const auto phi = gibbs_log_derivative(d, beta, beta_dot, x1);
            std::vector<double> pdot(5);
            for (std::size_t x = 0; x < 5; ++x) pdot[x] = p[x] * phi[x];
            const double lhs = fr_speed(p, pdot);
            const double rhs =
                std::sqrt(beta_dot * beta_dot * fisher_information_metric(d, beta, x1));
            CHECK(lhs == Catch::Approx(rhs).margin(1e-8));
        }
    }
}

TEST_CASE("mixture fisher information matches brute-force score variance") {
    // I(kappa) = sum_x pdot(x)^2 / p(x) with pdot = delta_x1 - source.
    std::mt19937_64 gen(123);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> w(8);
        for (double& x : w) x = u(gen);
        const Pmf src = Pmf::normalized(std::move(w));
        const std::size_t x1 = rep % 8;
        const double kappa = 0.1 + 0.8 * u(gen);
        const Pmf p = mixture_conditional(src, kappa, x1);
        double brute = 0.0;
        for (std::size_t x = 0; x < 8; ++x) {
            const double pd = (x == x1 ? 1.0 : 0.0) - src[x];
            brute += pd * pd / p[x];
        }
        CHECK(brute ==
              Catch::Approx(fisher_information_mixture(src[x1], kappa)).margin(1e-8));
    }
}

TEST_CASE("length and energy of sampled paths") {
    // Constant path.
    std::vector<std::pair<double, Pmf>> constant;
    for (int k = 0; k <= 10; ++k) constant.emplace_back(k / 10.0, Pmf::uniform(3));
    const auto ce = fr_length_and_energy(constant);
    CHECK(ce.length == 0.0);
    CHECK(ce.energy == 0.0);
    CHECK_THROWS_AS(fr_length_and_energy({{0.0, Pmf::uniform(2)}, {1.0, Pmf::uniform(2)}}),
                    std::invalid_argument);

    // Mixture path with p1 = 0.25 (uniform s=4 source): analytic length of the
    // full path is 2 arccos(sqrt(p1)) = 2 pi / 3; truncate just short of 1.
    const Pmf src = Pmf::uniform(4);
    const double kmax = 1.0 - 1e-6;
    const auto ell = [](double k) {
        return 2.0 * std::asin(std::sqrt(0.25 + 0.75 * k)) - 2.0 * std::asin(0.5);
    };
    // Dense monotone schedules: the Fisher-Rao speed diverges like
    // 1/sqrt(1-kappa) near kappa = 1, so sample along the geodesic angle
    // a = arcsin sqrt(p1 + (1-p1) kappa), where the speed is constant; a
    // uniform-in-t grid would need ~1/(1-kmax) points to resolve the end.
    const double a0 = std::asin(0.5);
    const double a1 = std::asin(std::sqrt(0.25 + 0.75 * kmax));
    const auto kappa_of_angle = [&](double a) {
        const double sn = std::sin(a);
        return (sn * sn - 0.25) / 0.75;
    };
    std::vector<std::pair<double, Pmf>> uni, quad;
    const int n = 4000;
    for (int k = 0; k <= n; ++k) {
        const double t = static_cast<double>(k) / n;
        uni.emplace_back(t, mixture_conditional(src, kappa_of_angle(a0 + t * (a1 - a0)), 0));
        quad.emplace_back(t,
                          mixture_conditional(src, kappa_of_angle(a0 + t * t * (a1 - a0)), 0));
    }
    const auto le_uni = fr_length_and_energy(uni);
    const auto le_quad = fr_length_and_energy(quad);
    CHECK(le_uni.length == Catch::Approx(ell(kmax)).epsilon(0.01));
    CHECK(ell(1.0) == Catch::Approx(2.0 * 3.141592653589793 / 3.0).epsilon(1e-12));
    // Lemma-style invariance: same length under a different schedule.
    CHECK(le_quad.length == Catch::Approx(le_uni.length).epsilon(0.005));
    // Cauchy-Schwarz: energy >= length^2 over a unit time interval.
    CHECK(le_uni.energy >= le_uni.length * le_uni.length - 1e-6);
    CHECK(le_quad.energy >= le_quad.length * le_quad.length - 1e-6);
}

TEST_CASE("path family variants") {
    const PathFamily metric(MetricInducedFamily{binary_distance()});
    CHECK(metric.is_metric());
    CHECK(metric.vocab_size() == 2);
    const Pmf pc = metric.conditional(std::log(3.0), 0);
    CHECK(pc[0] == Catch::Approx(0.75));

    const PathFamily mix(MixtureFamily{Pmf::uniform(3), std::nullopt});
    CHECK_FALSE(mix.is_metric());
    const Pmf mc = mix.conditional(0.5, 1);
    CHECK(mc[1] == Catch::Approx(0.5 + 0.5 / 3.0));
    const auto md = mix.conditional_dot(0.5, 2.0, 1);
    CHECK(md[1] == Catch::Approx(2.0 * (1.0 - 1.0 / 3.0)));
    CHECK(md[0] == Catch::Approx(-2.0 / 3.0));

    // Mask construction requires a delta source at the mask state.
    CHECK_NOTHROW(PathFamily(MixtureFamily{Pmf::delta(4, 3), 3}));
    CHECK_THROWS_AS(PathFamily(MixtureFamily{Pmf::uniform(4), 3}), std::invalid_argument);
}
