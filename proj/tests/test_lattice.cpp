#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "bsvie/noise.hpp"
#include "bsvie/numeric.hpp"
#include "bsvie/time_grid.hpp"

using namespace bsvie;

TEST_CASE("make_grid produces uniform nodes") {
    const auto g = make_grid(1.0, 4);
    REQUIRE(g.nodes.size() == 5);
    CHECK(g.nodes[0] == 0.0);
    CHECK(g.nodes[1] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(g.nodes[2] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g.nodes[4] == 1.0);

    const auto single = make_grid(2.0, 1);
    CHECK(single.nodes == std::vector<double>{0.0, 2.0});
    CHECK(single.dt == 2.0);

    const auto p2 = make_grid(1.0, 64);
    CHECK(p2.dt == 0.015625);

    // dt * M = T within 1e-12 relative error; nodes strictly increasing.
    for (int M : {1, 3, 7, 64, 1000}) {
        const auto gr = make_grid(1.7, M);
        CHECK(std::abs(gr.dt * M - 1.7) <= 1e-12 * 1.7);
        for (int k = 0; k < M; ++k) CHECK(gr.nodes[k] < gr.nodes[k + 1]);
        CHECK(gr.nodes.back() == 1.7);
    }

    CHECK_THROWS_AS(make_grid(0.0, 4), ValidationError);
    CHECK_THROWS_AS(make_grid(-1.0, 4), ValidationError);
    CHECK_THROWS_AS(make_grid(1.0, 0), ValidationError);
}

TEST_CASE("triangular index enumerates the upper triangle") {
    const TriangularIndex tri(5);
    CHECK(tri.size() == 21); // (M+1)(M+2)/2

    const auto pairs = tri.pairs();
    REQUIRE(pairs.size() == tri.size());
    std::set<std::pair<int, int>> seen;
    for (std::size_t f = 0; f < pairs.size(); ++f) {
        const auto [i, k] = pairs[f];
        CHECK(0 <= i);
        CHECK(i <= k);
        CHECK(k <= 5);
        CHECK(tri.flat(i, k) == f); // row-major: i outer, k inner
        seen.insert(pairs[f]);
    }
    CHECK(seen.size() == tri.size()); // bijection
}

TEST_CASE("path sampling is deterministic and prefix-stable") {
    const auto g = make_grid(1.0, 16);
    const auto a = NoiseEnsemble::sample_paths(g, 2, 8, 12345);
    const auto b = NoiseEnsemble::sample_paths(g, 2, 8, 12345);
    for (int p = 0; p < 8; ++p)
        for (int k = 0; k < 16; ++k)
            for (int c = 0; c < 2; ++c) CHECK(a.increment(k, p, c) == b.increment(k, p, c));

    const auto big = NoiseEnsemble::sample_paths(g, 2, 64, 12345);
    for (int p = 0; p < 8; ++p)
        for (int k = 0; k < 16; ++k)
            for (int c = 0; c < 2; ++c) CHECK(a.increment(k, p, c) == big.increment(k, p, c));

    const auto other = NoiseEnsemble::sample_paths(g, 2, 8, 54321);
    bool all_equal = true;
    for (int k = 0; k < 16; ++k)
        if (a.increment(k, 0, 0) != other.increment(k, 0, 0)) all_equal = false;
    CHECK_FALSE(all_equal);
}

TEST_CASE("path increments have the right moments") {
    const auto g = make_grid(1.0, 1024);
    const int P = 4096;
    const auto e = NoiseEnsemble::sample_paths(g, 1, P, 7);

    // Pool increments over a few steps to check mean/variance at P >= 1024.
    for (int k : {0, 511, 1023}) {
        double sum = 0.0, sumsq = 0.0;
        for (int p = 0; p < P; ++p) {
            const double dw = e.increment(k, p, 0);
            sum += dw;
            sumsq += dw * dw;
        }
        const double mean = sum / P;
        const double var = sumsq / P - mean * mean;
        CHECK(std::abs(mean) <= 5.0 * std::sqrt(g.dt / P));
        CHECK(std::abs(var - g.dt) <= 0.10 * g.dt);
    }

    // Cumulative sums reproduce W(T).
    for (int p = 0; p < 4; ++p) {
        double w = 0.0;
        for (int k = 0; k < 1024; ++k) w += e.increment(k, p, 0);
        CHECK(w == doctest::Approx(e.brownian(1024, p, 0)).epsilon(1e-12));
    }
}

TEST_CASE("lattice recombines with exact binomial weights") {
    const auto g1 = make_grid(1.0, 1);
    const auto l1 = NoiseEnsemble::build_lattice(g1);
    REQUIRE(l1.states_at(1) == 2);
    CHECK(l1.brownian(1, 0, 0) == doctest::Approx(-1.0));
    CHECK(l1.brownian(1, 1, 0) == doctest::Approx(1.0));
    CHECK(l1.state_weight(1, 0) == 0.5);
    CHECK(l1.state_weight(1, 1) == 0.5);

    const auto g2 = make_grid(1.0, 2);
    const auto l2 = NoiseEnsemble::build_lattice(g2);
    const double rdt = std::sqrt(0.5);
    REQUIRE(l2.states_at(2) == 3);
    CHECK(l2.brownian(2, 0, 0) == doctest::Approx(-2.0 * rdt));
    CHECK(l2.brownian(2, 1, 0) == doctest::Approx(0.0));
    CHECK(l2.brownian(2, 2, 0) == doctest::Approx(2.0 * rdt));
    CHECK(l2.state_weight(2, 0) == doctest::Approx(0.25));
    CHECK(l2.state_weight(2, 1) == doctest::Approx(0.5));
    CHECK(l2.state_weight(2, 2) == doctest::Approx(0.25));

    // E[W(T)] = 0 and weights sum to 1 at every step, for any M <= 64.
    for (int M : {5, 32, 64}) {
        const auto g = make_grid(1.0, M);
        const auto l = NoiseEnsemble::build_lattice(g);
        for (int k = 0; k <= M; ++k) {
            double total = 0.0, mean = 0.0;
            for (int j = 0; j <= k; ++j) {
                total += l.state_weight(k, j);
                mean += l.state_weight(k, j) * l.brownian(k, j, 0);
            }
            CHECK(std::abs(total - 1.0) <= 1e-12);
            CHECK(std::abs(mean) <= 1e-12);
        }
    }

    CHECK_THROWS_AS(NoiseEnsemble::build_lattice(make_grid(1.0, 65)), ResourceLimitError);
}

TEST_CASE("stable_sum is permutation independent") {
    std::vector<double> xs = {1e16, 1.0, -1e16, 3.5, 0.25, -7.75, 1e-3};
    std::vector<double> ys = {0.25, -7.75, 1e16, 3.5, 1e-3, 1.0, -1e16};
    CHECK(stable_sum(xs) == stable_sum(ys));
}
