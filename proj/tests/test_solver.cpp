#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bsvie/solver.hpp"
#include "test_oracles.hpp"

using namespace bsvie;

namespace {

Problem lattice_problem(int M, GeneratorSpec gen, FreeTermSpec psi, double T = 1.0) {
    Problem pr;
    pr.grid = make_grid(T, M);
    pr.generator = std::move(gen);
    pr.free_term = std::move(psi);
    pr.dimension = 1;
    pr.engine.backend = CondExpBackend::lattice_exact;
    pr.ensemble = std::make_shared<NoiseEnsemble>(
        NoiseEnsemble::build_lattice(pr.grid, std::max(kDefaultLatticeCap, M)));
    return pr;
}

Problem regression_problem(int M, int P, std::uint64_t seed, GeneratorSpec gen, FreeTermSpec psi,
                           double T = 1.0, int degree = 3) {
    Problem pr;
    pr.grid = make_grid(T, M);
    pr.generator = std::move(gen);
    pr.free_term = std::move(psi);
    pr.dimension = 1;
    pr.engine.backend = CondExpBackend::regression;
    pr.engine.regression.degree = degree;
    pr.ensemble =
        std::make_shared<NoiseEnsemble>(NoiseEnsemble::sample_paths(pr.grid, 1, P, seed));
    return pr;
}

LawFlow dirac0_laws(int M, int d) {
    LawFlow laws;
    for (int k = 0; k <= M; ++k) laws.y_laws.push_back(EmpiricalMeasure::dirac0(1));
    const TriangularIndex tri(M);
    for (std::size_t f = 0; f < tri.size(); ++f) laws.z_laws.push_back(EmpiricalMeasure::dirac0(d));
    return laws;
}

NodeField const_node_field(const NoiseEnsemble& ens, int M, double value) {
    NodeField f;
    f.values.resize(static_cast<std::size_t>(M) + 1);
    for (int k = 0; k <= M; ++k)
        f.values[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(ens.states_at(k)),
                                                     value);
    return f;
}

TriField zero_tri(const NoiseEnsemble& ens, int M, int d) {
    TriField f;
    f.steps = M;
    f.dim = d;
    const TriangularIndex tri(M);
    f.values.resize(tri.size());
    for (int i = 0; i <= M; ++i)
        for (int k = i; k <= M; ++k)
            f.values[tri.flat(i, k)].assign(static_cast<std::size_t>(ens.states_at(k)) * d, 0.0);
    return f;
}

} // namespace

TEST_CASE("constant free term with zero driver is exact on both backends") {
    for (bool lattice : {true, false}) {
        Problem pr = lattice
                         ? lattice_problem(8, GeneratorSpec::builtin(GeneratorFamily::zero),
                                           FreeTermSpec::builtin(FreeTermFamily::constant, {{"c", 2.0}}))
                         : regression_problem(8, 256, 3,
                                              GeneratorSpec::builtin(GeneratorFamily::zero),
                                              FreeTermSpec::builtin(FreeTermFamily::constant,
                                                                    {{"c", 2.0}}));
        const auto sol = picard_solve(pr);
        CHECK(sol.diagnostics.converged);
        REQUIRE(sol.diagnostics.norm_trail.size() >= 2);
        CHECK(sol.diagnostics.norm_trail[1] == 0.0); // second iterate difference
        // Exact on the lattice; the regression backend carries ridge slack.
        const double slack = lattice ? 1e-13 : 5e-8;
        for (const auto& slice : sol.Y.values)
            for (double v : slice) CHECK(std::abs(v - 2.0) <= slack);
        for (const auto& cell : sol.Z.values)
            for (double v : cell) CHECK(std::abs(v) <= slack);
    }
}

TEST_CASE("exact martingale representation on the lattice") {
    Problem pr = lattice_problem(32, GeneratorSpec::builtin(GeneratorFamily::zero),
                                 FreeTermSpec::builtin(FreeTermFamily::terminal_linear,
                                                       {{"a", 1.0}, {"c", 0.0}}));
    const auto& ens = *pr.ensemble;

    // Inner family with trivial flows: Ycal(t_i, t_k) = W(t_k), Zcal = 1.
    const auto [ycal, zcal] = solve_inner_family(pr, const_node_field(ens, 32, 0.0),
                                                 zero_tri(ens, 32, 1), dirac0_laws(32, 1));
    const TriangularIndex tri(32);
    double max_err_y = 0.0, max_err_z = 0.0;
    for (int i = 0; i <= 32; ++i) {
        for (int k = i; k <= 32; ++k) {
            const auto& y = ycal.values[tri.flat(i, k)];
            for (int s = 0; s < ens.states_at(k); ++s)
                max_err_y = std::max(max_err_y, std::abs(y[static_cast<std::size_t>(s)] -
                                                         ens.brownian(k, s, 0)));
            if (k < 32) {
                const auto& z = zcal.values[tri.flat(i, k)];
                for (double v : z) max_err_z = std::max(max_err_z, std::abs(v - 1.0));
            }
        }
    }
    CHECK(max_err_y <= 1e-12);
    CHECK(max_err_z <= 1e-12);

    // Full solve agrees and identifies the diagonal bit-exactly.
    const auto sol = picard_solve(pr);
    for (int k = 0; k <= 32; ++k)
        for (int s = 0; s < ens.states_at(k); ++s)
            CHECK(std::abs(sol.Y.values[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)] -
                           ens.brownian(k, s, 0)) <= 1e-12);
}

TEST_CASE("one frozen backward sweep matches the hand-unrolled recursion") {
    // Driver -y with the y-flow frozen at 1: Ycal(t_i, t_k) = 1 - (M - k) dt.
    const int M = 16;
    Problem pr = lattice_problem(M,
                                 GeneratorSpec::builtin(GeneratorFamily::linear_lipschitz,
                                                        {{"a", -1.0}}),
                                 FreeTermSpec::builtin(FreeTermFamily::constant, {{"c", 1.0}}));
    const auto& ens = *pr.ensemble;
    const auto [ycal, zcal] = solve_inner_family(pr, const_node_field(ens, M, 1.0),
                                                 zero_tri(ens, M, 1), dirac0_laws(M, 1));
    const TriangularIndex tri(M);
    for (int i = 0; i <= M; ++i) {
        for (int k = i; k <= M; ++k) {
            const double expect = 1.0 - (M - k) * pr.grid.dt;
            for (double v : ycal.values[tri.flat(i, k)])
                CHECK(v == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("deterministic exponential closed forms") {
    // dY = Y dt backward: Y(t) = e^{-(1-t)} up to first order in dt.
    for (int M : {64, 128}) {
        Problem pr = lattice_problem(M,
                                     GeneratorSpec::builtin(GeneratorFamily::linear_lipschitz,
                                                            {{"a", -1.0}}),
                                     FreeTermSpec::builtin(FreeTermFamily::constant, {{"c", 1.0}}));
        const auto sol = picard_solve(pr);
        CHECK(sol.diagnostics.converged);
        double max_err = 0.0;
        for (int k = 0; k <= M; ++k) {
            const double t = pr.grid.nodes[static_cast<std::size_t>(k)];
            for (double v : sol.Y.values[static_cast<std::size_t>(k)])
                max_err = std::max(max_err, std::abs(v - std::exp(-(1.0 - t))));
        }
        CHECK(max_err <= 5e-2);
    }

    // Pure mean-field driver g = mean(mu): Y(t) = e^{1-t}.
    Problem mf = lattice_problem(64,
                                 GeneratorSpec::builtin(GeneratorFamily::linear_lipschitz,
                                                        {{"m", 1.0}}),
                                 FreeTermSpec::builtin(FreeTermFamily::constant, {{"c", 1.0}}));
    const auto sol = picard_solve(mf);
    CHECK(sol.diagnostics.converged);
    double max_err = 0.0;
    for (int k = 0; k <= 64; ++k) {
        const double t = mf.grid.nodes[static_cast<std::size_t>(k)];
        for (double v : sol.Y.values[static_cast<std::size_t>(k)])
            max_err = std::max(max_err, std::abs(v - std::exp(1.0 - t)));
    }
    CHECK(max_err <= 5e-2);
}

TEST_CASE("picard contraction ratios on the lattice") {
    // L (1 + T) <= 1 with T = 1, L = 1/2; the weighted-norm differences must
    // decay by at least a factor 0.75 from the second iteration on.
    Problem pr = lattice_problem(
        32,
        GeneratorSpec::builtin(GeneratorFamily::linear_lipschitz,
                               {{"a", -0.25}, {"c", 0.25}, {"h0", 0.5}}),
        FreeTermSpec::builtin(FreeTermFamily::terminal_bounded, {{"c", 1.0}, {"a", 1.0}}));
    PicardConfig cfg;
    cfg.tolerance = 1e-12;
    const auto sol = picard_solve(pr, cfg);
    CHECK(sol.diagnostics.converged);
    const double L = 0.5;
    CHECK(sol.diagnostics.beta_used ==
          doctest::Approx(16.0 * L * L * 1.0 + 8.0 * L * L + 1.0)); // = 7
    const auto& trail = sol.diagnostics.norm_trail;
    REQUIRE(trail.size() >= 3);
    for (std::size_t n = 1; n < trail.size(); ++n) {
        if (trail[n - 1] <= 1e-14) break;
        CHECK(trail[n] / trail[n - 1] <= 0.75);
    }
}

TEST_CASE("a-priori bound formulas match hand-derived closed forms") {
    GeneratorConstants c;
    c.K1 = 1.0;
    c.K2 = 1.0;
    c.gamma = 1.0;
    c.beta = 0.0;
    c.beta0 = 0.0;
    const auto r = a_priori_bounds(c, GrowthClass::quadratic_bounded_law, 1.0);
    CHECK(*r.r1_local == doctest::Approx(4.0).epsilon(1e-13));
    CHECK(*r.r2_local ==
          doctest::Approx(2.0 * std::exp(2.0) + 4.0 * std::exp(8.0)).epsilon(1e-13));
    // theta = 1, L~ = 4e, Theta(0) = 4e * e^{4e}.
    const double l_tilde = 4.0 * std::exp(1.0);
    CHECK(*r.l_tilde == doctest::Approx(l_tilde).epsilon(1e-13));
    CHECK(*r.theta0 == doctest::Approx(l_tilde * std::exp(l_tilde)).epsilon(1e-12));

    GeneratorConstants degenerate;
    degenerate.K1 = 0.0;
    degenerate.K2 = 0.0;
    degenerate.gamma = 1.0;
    const auto rd = a_priori_bounds(degenerate, GrowthClass::quadratic_bounded_law, 1.0);
    CHECK(*rd.r1_local == 0.0);
    CHECK(*rd.r2_local == doctest::Approx(2.0).epsilon(1e-13));

    GeneratorConstants missing;
    missing.K1 = 1.0;
    CHECK_THROWS_AS(a_priori_bounds(missing, GrowthClass::quadratic_bounded_law, 1.0),
                    ValidationError);
    CHECK_THROWS_AS(a_priori_bounds(c, GrowthClass::linear, 1.0), ValidationError);
}

TEST_CASE("unbounded-law ladder reports L1, L2, L7 and gates L3..L6 on L0") {
    GeneratorConstants c;
    c.K1 = 1.0;
    c.K3 = 2.0;
    c.gamma_tilde = 2.0;
    c.gamma0 = 1.0;
    c.alpha = 1.0 / 3.0;
    c.beta = 1.0;
    c.beta0 = 1.0;

    const auto r = a_priori_bounds(c, GrowthClass::quadratic_unbounded_law, 1.0);
    REQUIRE(r.L1.has_value());
    REQUIRE(r.L7.has_value());
    CHECK_FALSE(r.L3.has_value());
    CHECK(r.m1_global.has_value());
    CHECK(r.m2_global.has_value());

    // Closed form for L1 at alpha = 1/3, gamma~ = 2, eps0 = 1/2, gamma0 = 1:
    // (1-a) gt e0 / 8 * ((1+a)/2)^((1+a)/(1-a)) * (4 g0 / gt)^(2/(1-a))
    const double a = 1.0 / 3.0;
    const double lead = (1.0 - a) * 2.0 * 0.5 / 8.0 * std::pow((1.0 + a) / 2.0, 2.0);
    const double l1 = lead * std::pow(2.0, 3.0);
    CHECK(*r.L1 == doctest::Approx(l1).epsilon(1e-13));

    AprioriInputs in;
    in.L0 = 1.0;
    const auto r2 = a_priori_bounds(c, GrowthClass::quadratic_unbounded_law, 1.0, in);
    CHECK(r2.L3.has_value());
    CHECK(r2.L4.has_value());
    CHECK(r2.L5.has_value());
    CHECK(r2.L6.has_value());
}

TEST_CASE("bmo proxy telescopes deterministic fields") {
    const int M = 8;
    Problem pr = lattice_problem(M, GeneratorSpec::builtin(GeneratorFamily::zero),
                                 FreeTermSpec::builtin(FreeTermFamily::constant, {{"c", 0.0}}));
    const auto& ens = *pr.ensemble;

    SolutionField s;
    s.steps = M;
    s.horizon = 1.0;
    s.dimension = 1;
    s.Y.values.resize(M + 1);
    for (int k = 0; k <= M; ++k)
        s.Y.values[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(ens.states_at(k)), 0.0);
    s.Z = zero_tri(ens, M, 1);
    CHECK(bmo_proxy(s, pr.engine, ens) == 0.0);

    // Z identically 1: the conditional tail energy telescopes to T - t_i,
    // maximal at i = 0.
    for (auto& cell : s.Z.values) std::fill(cell.begin(), cell.end(), 1.0);
    const TriangularIndex tri(M);
    for (int i = 0; i <= M; ++i)
        std::fill(s.Z.values[tri.flat(i, M)].begin(), s.Z.values[tri.flat(i, M)].end(), 0.0);
    CHECK(bmo_proxy(s, pr.engine, ens) == doctest::Approx(1.0).epsilon(1e-12));

    // The exact martingale-representation solve has Z = 1 everywhere.
    Problem mr = lattice_problem(16, GeneratorSpec::builtin(GeneratorFamily::zero),
                                 FreeTermSpec::builtin(FreeTermFamily::terminal_linear,
                                                       {{"a", 1.0}, {"c", 0.0}}));
    const auto sol = picard_solve(mr);
    CHECK(bmo_proxy(sol, mr.engine, *mr.ensemble) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("quadratic monitors stay clear for the bounded-law driver") {
    Problem pr = lattice_problem(
        32, GeneratorSpec::builtin(GeneratorFamily::quad_bounded, {{"cnu", 0.0}}),
        FreeTermSpec::builtin(FreeTermFamily::terminal_bounded, {{"c", 1.0}, {"a", 1.0}}));
    const auto sol = picard_solve(pr);
    CHECK(sol.diagnostics.converged);
    REQUIRE(sol.diagnostics.monitors.enabled);
    CHECK_FALSE(sol.diagnostics.monitors.y_breached);
    CHECK_FALSE(sol.diagnostics.monitors.bmo_breached);
    REQUIRE(sol.diagnostics.bounds.has_value());
    // K1 = 1 (tanh bound), K2 = 3 T^{1/3} = 3 with the law-of-Z term off.
    CHECK(*sol.diagnostics.bounds->r1_local ==
          doctest::Approx(2.0 * (1.0 + std::sqrt(3.0))).epsilon(1e-12));
}

TEST_CASE("quadratic free term must be bounded") {
    Problem pr = lattice_problem(8, GeneratorSpec::builtin(GeneratorFamily::quad_bounded),
                                 FreeTermSpec::builtin(FreeTermFamily::terminal_linear));
    CHECK_THROWS_AS(picard_solve(pr), ValidationError);
}

TEST_CASE("non-finite values raise a divergence error naming the cell") {
    Problem pr = lattice_problem(8,
                                 GeneratorSpec::builtin(GeneratorFamily::linear_lipschitz,
                                                        {{"h0", 1e308}}),
                                 FreeTermSpec::builtin(FreeTermFamily::constant, {{"c", 1.0}}));
    bool threw = false;
    try {
        picard_solve(pr);
    } catch (const DivergenceError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("cell (") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("non-convergence carries the norm trail") {
    Problem pr = lattice_problem(16,
                                 GeneratorSpec::builtin(GeneratorFamily::linear_lipschitz,
                                                        {{"a", -0.5}, {"c", 0.5}}),
                                 FreeTermSpec::builtin(FreeTermFamily::constant, {{"c", 1.0}}));
    PicardConfig cfg;
    cfg.max_iterations = 1;
    bool threw = false;
    try {
        picard_solve(pr, cfg);
    } catch (const NonConvergenceError& e) {
        threw = true;
        CHECK(e.partial().diagnostics.norm_trail.size() == 1);
        CHECK_FALSE(e.partial().diagnostics.converged);
    }
    CHECK(threw);
}

TEST_CASE("scenario permutation leaves laws and per-scenario values unchanged") {
    const int M = 6, P = 64;
    Problem pr = regression_problem(M, P, 19,
                                    GeneratorSpec::builtin(GeneratorFamily::linear_lipschitz,
                                                           {{"a", -0.5}, {"c", 0.5}}),
                                    FreeTermSpec::builtin(FreeTermFamily::terminal_bounded,
                                                          {{"c", 1.0}, {"a", 1.0}}));
    const auto base = picard_solve(pr);

    std::vector<int> perm(P);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    Problem shuffled = pr;
    shuffled.ensemble =
        std::make_shared<NoiseEnsemble>(pr.ensemble->permuted_scenarios(perm));
    const auto other = picard_solve(shuffled);

    CHECK(base.diagnostics.iterations == other.diagnostics.iterations);
    REQUIRE(base.diagnostics.norm_trail.size() == other.diagnostics.norm_trail.size());
    for (std::size_t n = 0; n < base.diagnostics.norm_trail.size(); ++n)
        CHECK(base.diagnostics.norm_trail[n] == other.diagnostics.norm_trail[n]);

    for (int k = 0; k <= M; ++k) {
        for (int p = 0; p < P; ++p) {
            CHECK(base.Y.values[static_cast<std::size_t>(k)][static_cast<std::size_t>(perm[static_cast<std::size_t>(p)])] ==
                  other.Y.values[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)]);
        }
        // Law flows coincide as measures: compare sorted supports.
        auto a = base.laws.y_laws[static_cast<std::size_t>(k)].points();
        auto b = other.laws.y_laws[static_cast<std::size_t>(k)].points();
        std::vector<double> av(a.begin(), a.end()), bv(b.begin(), b.end());
        std::sort(av.begin(), av.end());
        std::sort(bv.begin(), bv.end());
        CHECK(av == bv);
    }
}
