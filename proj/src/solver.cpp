#include "bsvie/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "bsvie/numeric.hpp"
#include "bsvie/parallel.hpp"

namespace bsvie {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog10e = 0.4342944819032518;

double opt(const std::optional<double>& v, const char* name) {
    if (!v) throw ValidationError(std::string("a_priori_bounds: missing constant ") + name);
    return *v;
}

/// Clamp a z vector to the ball of radius r (scales, preserves direction).
void clamp_vector(std::vector<double>& z, double r) {
    double n2 = 0.0;
    for (double c : z) n2 += c * c;
    const double n = std::sqrt(n2);
    if (n > r && n > 0.0) {
        const double scale = r / n;
        for (double& c : z) c *= scale;
    }
}

double weighted_mean_sq(const std::vector<double>& v, const NoiseEnsemble& ens, int k, int dim) {
    // mean over states of |v_state|^2, state weights included; order-free.
    const int states = ens.states_at(k);
    std::vector<double> terms(static_cast<std::size_t>(states));
    for (int s = 0; s < states; ++s) {
        double n2 = 0.0;
        for (int c = 0; c < dim; ++c) {
            const double x = v[static_cast<std::size_t>(s) * dim + c];
            n2 += x * x;
        }
        terms[static_cast<std::size_t>(s)] = ens.state_weight(k, s) * n2;
    }
    return stable_sum(std::move(terms));
}

double weighted_mean(const std::vector<double>& v, const NoiseEnsemble& ens, int k) {
    const int states = ens.states_at(k);
    std::vector<double> terms(static_cast<std::size_t>(states));
    for (int s = 0; s < states; ++s)
        terms[static_cast<std::size_t>(s)] = ens.state_weight(k, s) * v[static_cast<std::size_t>(s)];
    return stable_sum(std::move(terms));
}


NodeField zero_node_field(const NoiseEnsemble& ens, int M) {
    NodeField f;
    f.values.resize(static_cast<std::size_t>(M) + 1);
    for (int k = 0; k <= M; ++k)
        f.values[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(ens.states_at(k)), 0.0);
    return f;
}

TriField zero_tri_field(const NoiseEnsemble& ens, int M, int dim) {
    TriField f;
    f.steps = M;
    f.dim = dim;
    const TriangularIndex tri(M);
    f.values.resize(tri.size());
    for (int i = 0; i <= M; ++i)
        for (int k = i; k <= M; ++k)
            f.values[tri.flat(i, k)].assign(static_cast<std::size_t>(ens.states_at(k)) * dim, 0.0);
    return f;
}

NodeField diagonal_of(const TriField& ycal, int M) {
    NodeField f;
    f.values.resize(static_cast<std::size_t>(M) + 1);
    const TriangularIndex tri(M);
    for (int k = 0; k <= M; ++k) f.values[static_cast<std::size_t>(k)] = ycal.values[tri.flat(k, k)];
    return f;
}

} // namespace

namespace detail {

LawStatsFlow dirac0_stats(int steps) {
    LawStatsFlow f;
    f.w2_mu0.assign(static_cast<std::size_t>(steps) + 1, 0.0);
    f.mean_mu.assign(static_cast<std::size_t>(steps) + 1, 0.0);
    f.w2_nu0.assign(TriangularIndex(steps).size(), 0.0);
    return f;
}

LawStatsFlow stats_from_fields(const NodeField& y, const TriField& z,
                               const NoiseEnsemble& ensemble) {
    const int M = static_cast<int>(y.values.size()) - 1;
    const TriangularIndex tri(M);
    LawStatsFlow f;
    f.w2_mu0.resize(static_cast<std::size_t>(M) + 1);
    f.mean_mu.resize(static_cast<std::size_t>(M) + 1);
    f.w2_nu0.resize(tri.size());
    for (int k = 0; k <= M; ++k) {
        f.w2_mu0[static_cast<std::size_t>(k)] =
            std::sqrt(weighted_mean_sq(y.values[static_cast<std::size_t>(k)], ensemble, k, 1));
        f.mean_mu[static_cast<std::size_t>(k)] =
            weighted_mean(y.values[static_cast<std::size_t>(k)], ensemble, k);
    }
    for (int i = 0; i <= M; ++i)
        for (int k = i; k <= M; ++k)
            f.w2_nu0[tri.flat(i, k)] =
                std::sqrt(weighted_mean_sq(z.values[tri.flat(i, k)], ensemble, k, z.dim));
    return f;
}

LawStatsFlow stats_from_laws(const LawFlow& laws) {
    LawStatsFlow f;
    f.w2_mu0.reserve(laws.y_laws.size());
    f.mean_mu.reserve(laws.y_laws.size());
    f.w2_nu0.reserve(laws.z_laws.size());
    for (const auto& mu : laws.y_laws) {
        f.w2_mu0.push_back(distance_to_dirac0(2.0, mu));
        std::vector<double> terms(static_cast<std::size_t>(mu.size()));
        for (int i = 0; i < mu.size(); ++i)
            terms[static_cast<std::size_t>(i)] = mu.weight(i) * mu.point(i)[0];
        f.mean_mu.push_back(stable_sum(std::move(terms)));
    }
    for (const auto& nu : laws.z_laws) f.w2_nu0.push_back(distance_to_dirac0(2.0, nu));
    return f;
}

LawFlow laws_from_fields(const NodeField& y, const TriField& z, const NoiseEnsemble& ensemble,
                         int dim) {
    const int M = static_cast<int>(y.values.size()) - 1;
    const TriangularIndex tri(M);
    LawFlow laws;
    laws.y_laws.reserve(static_cast<std::size_t>(M) + 1);
    for (int k = 0; k <= M; ++k) {
        const int states = ensemble.states_at(k);
        std::vector<double> w(static_cast<std::size_t>(states));
        for (int s = 0; s < states; ++s) w[static_cast<std::size_t>(s)] = ensemble.state_weight(k, s);
        laws.y_laws.emplace_back(1, y.values[static_cast<std::size_t>(k)], std::move(w));
    }
    laws.z_laws.reserve(tri.size());
    for (int i = 0; i <= M; ++i) {
        for (int k = i; k <= M; ++k) {
            const int states = ensemble.states_at(k);
            std::vector<double> w(static_cast<std::size_t>(states));
            for (int s = 0; s < states; ++s)
                w[static_cast<std::size_t>(s)] = ensemble.state_weight(k, s);
            laws.z_laws.emplace_back(dim, z.values[tri.flat(i, k)], std::move(w));
        }
    }
    return laws;
}

std::pair<TriField, TriField> inner_family_impl(const Problem& problem, const NodeField& y_flow,
                                                const LawStatsFlow& stats, double z_clamp) {
    const TimeGrid& grid = problem.grid;
    const NoiseEnsemble& ens = *problem.ensemble;
    const int M = grid.steps;
    const int d = problem.dimension;
    const TriangularIndex tri(M);
    const bool lattice = ens.mode() == NoiseMode::lattice;
    const bool quadratic = problem.generator.growth_class() != GrowthClass::linear;
    const SingularKind singular = problem.generator.singular_kind();
    const double ell_coeff =
        singular == SingularKind::none ? 0.0 : problem.generator.coeff("ell_coeff");

    TriField ycal;
    ycal.steps = M;
    ycal.dim = 1;
    ycal.values.resize(tri.size());
    TriField zcal;
    zcal.steps = M;
    zcal.dim = d;
    zcal.values.resize(tri.size());

    // Terminal slice: Ycal(t_i, t_M) = psi(t_i) on the step-M states.
    const int terminal_states = ens.states_at(M);
    std::vector<std::vector<double>> value(static_cast<std::size_t>(M) + 1);
    std::vector<double> wT(static_cast<std::size_t>(d));
    for (int i = 0; i <= M; ++i) {
        std::vector<double> v(static_cast<std::size_t>(terminal_states));
        for (int s = 0; s < terminal_states; ++s) {
            for (int c = 0; c < d; ++c)
                wT[static_cast<std::size_t>(c)] =
                    ens.brownian(M, s, problem.stream_block * d + c);
            v[static_cast<std::size_t>(s)] = problem.free_term.eval(grid.nodes[static_cast<std::size_t>(i)], wT);
        }
        ycal.values[tri.flat(i, M)] = v;
        zcal.values[tri.flat(i, M)].assign(static_cast<std::size_t>(terminal_states) * d, 0.0);
        value[static_cast<std::size_t>(i)] = std::move(v);
    }

    for (int k = M - 1; k >= 0; --k) {
        std::optional<RegressionFit> fit;
        if (!lattice)
            fit.emplace(ens, k, FeatureSpec{problem.stream_block * d, d, {}},
                        problem.engine.regression);

        const double t_k = grid.nodes[static_cast<std::size_t>(k)];
        const double s_mid = t_k + 0.5 * grid.dt;
        const int states = ens.states_at(k);

        const auto process_row = [&](std::size_t row) {
            const int i = static_cast<int>(row);
            const double t_i = grid.nodes[static_cast<std::size_t>(i)];
            const std::vector<double>& v_next = value[static_cast<std::size_t>(i)];

            // Conditional mean first; it doubles as the control variate for Z.
            std::vector<double> cond;
            std::vector<double> zrow;
            if (lattice) {
                cond = condexp(problem.engine, ens, k, v_next);
                zrow = extract_z(problem.engine, ens, k, v_next);
            } else {
                cond = fit->apply(v_next);
                zrow.assign(static_cast<std::size_t>(states) * d, 0.0);
                std::vector<double> tgt(static_cast<std::size_t>(states));
                const double inv_dt = 1.0 / grid.dt;
                for (int c = 0; c < d; ++c) {
                    for (int p = 0; p < states; ++p)
                        tgt[static_cast<std::size_t>(p)] =
                            (v_next[static_cast<std::size_t>(p)] - cond[static_cast<std::size_t>(p)]) *
                            ens.increment(k, p, problem.stream_block * d + c) * inv_dt;
                    const auto fitted = fit->apply(tgt);
                    for (int p = 0; p < states; ++p)
                        zrow[static_cast<std::size_t>(p) * d + c] = fitted[static_cast<std::size_t>(p)];
                }
            }

            // Singular weight: exact cell integral on the diagonal cell,
            // midpoint value elsewhere.
            double ell_value = 0.0;
            if (singular != SingularKind::none) {
                if (i == k)
                    ell_value = ell_coeff *
                                integrate_singular_weight(singular, t_i, t_k, t_k + grid.dt) /
                                grid.dt;
                else
                    ell_value = problem.generator.ell_pointwise(t_i, s_mid);
            }

            LawStats cell_stats;
            cell_stats.w2_mu0 = stats.w2_mu0[static_cast<std::size_t>(k)];
            cell_stats.mean_mu = stats.mean_mu[static_cast<std::size_t>(k)];
            cell_stats.w2_nu0 = stats.w2_nu0[tri.flat(i, k)];

            std::vector<double> next(static_cast<std::size_t>(states));
            std::vector<double> zarg(static_cast<std::size_t>(d));
            for (int s = 0; s < states; ++s) {
                for (int c = 0; c < d; ++c)
                    zarg[static_cast<std::size_t>(c)] = zrow[static_cast<std::size_t>(s) * d + c];
                if (quadratic) clamp_vector(zarg, z_clamp);
                const double y_arg = y_flow.values[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
                const double g = problem.generator.eval_with_ell(t_i, s_mid, y_arg, zarg,
                                                                 cell_stats, ell_value);
                next[static_cast<std::size_t>(s)] = cond[static_cast<std::size_t>(s)] + grid.dt * g;
            }
            if (!all_finite(next)) {
                std::ostringstream os;
                os << "inner solve diverged at cell (i=" << i << ", k=" << k << ")";
                throw DivergenceError(os.str());
            }
            ycal.values[tri.flat(i, k)] = next;
            zcal.values[tri.flat(i, k)] = std::move(zrow);
            value[static_cast<std::size_t>(i)] = std::move(next);
        };
        if (!lattice && states >= 512)
            parallel_for(static_cast<std::size_t>(k) + 1, process_row);
        else
            for (std::size_t row = 0; row <= static_cast<std::size_t>(k); ++row) process_row(row);
    }

    return {std::move(ycal), std::move(zcal)};
}

double weighted_norm_diff(const NodeField& ya, const NodeField& yb, const TriField& za,
                          const TriField& zb, const NoiseEnsemble& ensemble,
                          const TimeGrid& grid, double beta) {
    const int M = grid.steps;
    const TriangularIndex tri(M);
    double total = 0.0;
    for (int k = 0; k < M; ++k) {
        std::vector<double> diff(ya.values[static_cast<std::size_t>(k)].size());
        for (std::size_t s = 0; s < diff.size(); ++s)
            diff[s] = ya.values[static_cast<std::size_t>(k)][s] - yb.values[static_cast<std::size_t>(k)][s];
        total += std::exp(beta * grid.nodes[static_cast<std::size_t>(k)]) *
                 weighted_mean_sq(diff, ensemble, k, 1) * grid.dt;
    }
    for (int i = 0; i <= M; ++i) {
        for (int k = i; k < M; ++k) {
            const auto& a = za.values[tri.flat(i, k)];
            const auto& b = zb.values[tri.flat(i, k)];
            std::vector<double> diff(a.size());
            for (std::size_t s = 0; s < diff.size(); ++s) diff[s] = a[s] - b[s];
            total += std::exp(beta * grid.nodes[static_cast<std::size_t>(k)]) *
                     weighted_mean_sq(diff, ensemble, k, za.dim) * grid.dt * grid.dt;
        }
    }
    return total;
}

double resolve_z_clamp(const Problem& problem, const PicardConfig& config) {
    if (problem.generator.growth_class() == GrowthClass::linear) return kInf;
    GeneratorConstants constants = problem.generator.constants(problem.grid.horizon);
    if (!constants.K1 && problem.free_term.bounded()) constants.K1 = problem.free_term.k1();
    const BoundsRecord bounds =
        a_priori_bounds(constants, problem.generator.growth_class(), problem.grid.horizon);
    const double m2 = problem.generator.growth_class() == GrowthClass::quadratic_bounded_law
                          ? bounds.m2_bar.value_or(kInf)
                          : bounds.m2_global.value_or(kInf);
    const double from_bounds = std::sqrt(m2 / problem.grid.dt);
    return std::min(config.z_clamp.value_or(from_bounds), config.z_clamp_cap);
}

FrozenSolve picard_solve_frozen(const Problem& problem, const LawStatsFlow& stats,
                                const PicardConfig& config) {
    const TimeGrid& grid = problem.grid;
    const NoiseEnsemble& ens = *problem.ensemble;
    const int M = grid.steps;
    const int d = problem.dimension;
    const double tol =
        config.tolerance.value_or(ens.mode() == NoiseMode::lattice ? 1e-6 : 1e-4);

    double beta = 1.0;
    if (config.beta) {
        beta = *config.beta;
    } else if (problem.generator.growth_class() == GrowthClass::linear) {
        const double L = problem.generator.constants(grid.horizon).L.value_or(0.0);
        beta = 16.0 * L * L * grid.horizon + 8.0 * L * L + 1.0;
    }
    const double clamp = resolve_z_clamp(problem, config);

    FrozenSolve out;
    NodeField y_flow;
    y_flow.values.resize(static_cast<std::size_t>(M) + 1);
    for (int k = 0; k <= M; ++k)
        y_flow.values[static_cast<std::size_t>(k)].assign(
            static_cast<std::size_t>(ens.states_at(k)), 0.0);
    TriField z_prev;
    z_prev.steps = M;
    z_prev.dim = d;
    const TriangularIndex tri(M);
    z_prev.values.resize(tri.size());
    for (int i = 0; i <= M; ++i)
        for (int k = i; k <= M; ++k)
            z_prev.values[tri.flat(i, k)].assign(
                static_cast<std::size_t>(ens.states_at(k)) * d, 0.0);

    for (int n = 1; n <= config.max_iterations; ++n) {
        auto [yc, zc] = detail::inner_family_impl(problem, y_flow, stats, clamp);
        NodeField y_new = diagonal_of(yc, M);
        const double diff =
            detail::weighted_norm_diff(y_new, y_flow, zc, z_prev, ens, grid, beta);
        out.norm_trail.push_back(diff);
        out.iterations = n;
        out.Y = y_new;
        out.Z = std::move(zc);
        y_flow = std::move(y_new);
        z_prev = out.Z;
        if (diff < tol) {
            out.converged = true;
            break;
        }
    }
    if (!out.converged)
        throw NonConvergenceError("picard_solve_frozen: no convergence", SolutionField{});
    return out;
}

} // namespace detail

std::pair<TriField, TriField> solve_inner_family(const Problem& problem, const NodeField& y_flow,
                                                 const TriField& z_flow, const LawFlow& laws) {
    (void)z_flow; // part of the fixed-point map's domain; enters only through laws
    const LawStatsFlow stats = detail::stats_from_laws(laws);
    double clamp = kInf;
    if (problem.generator.growth_class() != GrowthClass::linear) {
        PicardConfig defaults;
        clamp = defaults.z_clamp_cap;
    }
    return detail::inner_family_impl(problem, y_flow, stats, clamp);
}

BoundsRecord a_priori_bounds(const GeneratorConstants& constants, GrowthClass growth_class,
                             double horizon, const AprioriInputs& inputs) {
    BoundsRecord r;
    r.growth_class = growth_class;
    r.eps0 = inputs.eps0;
    r.delta = inputs.delta;
    r.L0 = inputs.L0;
    const double T = horizon;

    if (growth_class == GrowthClass::linear)
        throw ValidationError("a_priori_bounds: the ladder applies to quadratic classes only");

    if (growth_class == GrowthClass::quadratic_bounded_law) {
        const double K1 = opt(constants.K1, "K1");
        const double K2 = opt(constants.K2, "K2");
        const double g = opt(constants.gamma, "gamma");
        const double b = constants.beta.value_or(0.0);
        const double b0 = constants.beta0.value_or(0.0);
        if (g <= 0.0) throw ValidationError("a_priori_bounds: gamma must be positive");
        if (K1 < 0.0 || K2 < 0.0) throw ValidationError("a_priori_bounds: K1, K2 must be >= 0");

        const double r1 = 2.0 * (K1 + std::sqrt(K2));
        const double r2 = (2.0 / (g * g)) * std::exp(2.0 * g * K1) +
                          (4.0 * std::sqrt(K2) / g) * std::exp(2.0 * g * r1);
        r.r1_local = r1;
        r.r2_local = r2;
        r.provenance.emplace_back("r1_local", "local sup bound on |Y|: 2(K1 + sqrt(K2))");
        r.provenance.emplace_back(
            "r2_local", "local conditional Z energy: (2/g^2)e^{2gK1} + (4 sqrt(K2)/g)e^{2gR1}");

        const double theta = b * b + b0 * b0 + 1.0;
        const double l_tilde = std::exp(theta * T) * (K1 * K1 + K2 + 2.0);
        const double rho = l_tilde * std::exp(l_tilde * T);
        const double m1_hat = std::exp(theta * T) * (K1 * K1 + K2 + 2.0 * rho * T);
        const double m1 = std::max(rho, m1_hat);
        r.l_tilde = l_tilde;
        r.theta0 = rho;
        r.m1_hat = m1_hat;
        r.m1_bar = m1;
        r.theta0_log10 = std::log10(l_tilde) + l_tilde * T * kLog10e;
        r.m1_bar_log10 = std::isinf(m1) ? theta * T * kLog10e + std::log10(2.0 * T) + *r.theta0_log10
                                        : std::log10(m1);

        // Xi(x) = (e^{gx} - gx - 1)/g^2, Xi'(x) = (e^{gx} - 1)/g for x >= 0.
        const auto xi = [g](double x) { return (std::exp(g * x) - g * x - 1.0) / (g * g); };
        const auto xi_prime = [g](double x) { return (std::exp(g * x) - 1.0) / g; };
        const double root_m1 = std::sqrt(m1);
        const double m2 = 2.0 * xi(K1) +
                          2.0 * xi_prime(root_m1) *
                              (std::sqrt(K2 * T) + (b + b0) * root_m1 * T);
        r.m2_bar = m2;
        r.m2_bar_log10 = std::isinf(m2) && std::isfinite(root_m1)
                             ? g * root_m1 * kLog10e
                             : (std::isfinite(m2) ? std::optional<double>(std::log10(m2))
                                                  : std::optional<double>())
                                   .value_or(kInf);
        r.provenance.emplace_back("theta0",
                                  "value at 0 of the increasing solution of Theta = L~ + L~ int Theta");
        r.provenance.emplace_back("m1_bar", "global sup bound on |Y|^2: max(Theta(0), m1_hat)");
        r.provenance.emplace_back("m2_bar",
                                  "global conditional Z energy via the convex weight Xi");
        return r;
    }

    // Strictly quadratic, unbounded in the law of Z.
    const double K1 = opt(constants.K1, "K1");
    const double K3 = opt(constants.K3, "K3");
    const double gt = opt(constants.gamma_tilde, "gamma_tilde");
    const double g0 = opt(constants.gamma0, "gamma0");
    const double a = opt(constants.alpha, "alpha");
    const double b = constants.beta.value_or(0.0);
    const double b0 = constants.beta0.value_or(0.0);
    if (a < 0.0 || a >= 1.0) throw ValidationError("a_priori_bounds: alpha must lie in [0,1)");
    if (gt <= 0.0) throw ValidationError("a_priori_bounds: gamma_tilde must be positive");
    const double eps0 = inputs.eps0;
    if (eps0 <= 0.0) throw ValidationError("a_priori_bounds: eps0 must be positive");

    const double lead = (1.0 - a) * gt * eps0 / 8.0 *
                        std::pow((1.0 + a) / 2.0, (1.0 + a) / (1.0 - a));
    const auto l2_of = [&](double delta) {
        return lead * std::pow(4.0 * delta / (gt * eps0), 2.0 / (1.0 - a));
    };
    r.L1 = lead * std::pow(4.0 * g0 / gt, 2.0 / (1.0 - a));
    r.L2_gamma0 = l2_of(g0);
    if (inputs.delta) r.L2_delta = l2_of(*inputs.delta);
    r.L7 = 3.0 * (K1 + K3) + 2.0 * (*r.L1) * T + 2.0 * (*r.L2_gamma0) * T + 3.0 * (b + b0);
    r.provenance.emplace_back("L1", "Young-split weight at delta = gamma0/eps0 scaling");
    r.provenance.emplace_back("L7", "linear ODE coefficient for the sup bound on |Y|");

    if (inputs.L0) {
        const double L0 = *inputs.L0;
        r.L3 = (K1 + K3) * eps0 + (*r.L1) * T + l2_of(L0 * g0) * T;
        r.L4 = L0 * std::exp(L0 * (K1 + K3) + *r.L3) + (L0 + eps0) * (b + b0);
        r.L5 = (2.0 / gt) * (std::log(*r.L4) + *r.L4);
        r.L6 = (*r.L4) * std::exp(gt / 2.0 * (*r.L5)) + (*r.L4) + gt / 2.0 * (*r.L5);
        r.provenance.emplace_back("L3_L6", "local-solution ladder; requires the supplied L0");
    } else {
        r.provenance.emplace_back(
            "L3_L6", "not reported: L0 has no closed form and was not supplied");
    }

    const double alpha0 = (*r.L7) * std::exp((*r.L7) * T);
    const double m_tilde = 3.0 * (K1 + K3) + 2.0 * (*r.L1) * T + 2.0 * (*r.L2_gamma0) * T +
                           3.0 * (b + b0) * T * alpha0;
    r.m1_global = std::max(alpha0, m_tilde);
    r.m2_global = (4.0 / gt) * (*r.m1_global + K1 + K3 + 2.0 * (*r.L1) * T +
                                (b + b0) * T * (*r.m1_global));
    r.provenance.emplace_back("m1_global", "global sup bound on |Y|: max(L7 e^{L7 T}, m_tilde)");
    r.provenance.emplace_back("m2_global", "global conditional Z energy from the m1 bound");
    return r;
}

SolutionField picard_solve(const Problem& problem, const PicardConfig& config) {
    const TimeGrid& grid = problem.grid;
    const NoiseEnsemble& ens = *problem.ensemble;
    const int M = grid.steps;
    const int d = problem.dimension;
    const bool lattice = ens.mode() == NoiseMode::lattice;
    const GrowthClass cls = problem.generator.growth_class();
    const bool quadratic = cls != GrowthClass::linear;

    if (lattice && d != 1)
        throw ValidationError("picard_solve: the lattice backend forces d = 1");
    if (quadratic && !problem.free_term.bounded())
        throw ValidationError(
            "picard_solve: quadratic classes require a bounded free term");
    if (config.max_iterations < 1)
        throw ValidationError("picard_solve: max iterations must be >= 1");

    const double tol = config.tolerance.value_or(lattice ? 1e-6 : 1e-4);
    if (!(tol > 0.0)) throw ValidationError("picard_solve: tolerance must be positive");
    if (!(config.damping > 0.0 && config.damping <= 1.0))
        throw ValidationError("picard_solve: damping must lie in (0, 1]");

    GeneratorConstants constants = problem.generator.constants(grid.horizon);
    if (quadratic && !constants.K1) constants.K1 = problem.free_term.k1();

    double beta = 1.0;
    if (config.beta) {
        beta = *config.beta;
    } else if (cls == GrowthClass::linear) {
        const double L = constants.L.value_or(0.0);
        beta = 16.0 * L * L * grid.horizon + 8.0 * L * L + 1.0;
    }

    std::optional<BoundsRecord> bounds;
    double z_clamp = config.z_clamp_cap;
    if (quadratic) {
        bounds = a_priori_bounds(constants, cls, grid.horizon);
        const double m2 = cls == GrowthClass::quadratic_bounded_law
                              ? bounds->m2_bar.value_or(kInf)
                              : bounds->m2_global.value_or(kInf);
        const double from_bounds = std::sqrt(m2 / grid.dt);
        z_clamp = std::min(config.z_clamp.value_or(from_bounds), config.z_clamp_cap);
    }

    NodeField y_flow = zero_node_field(ens, M);
    TriField z_flow = zero_tri_field(ens, M, d);
    LawStatsFlow stats = detail::dirac0_stats(M);

    PicardDiagnostics diag;
    diag.beta_used = beta;
    diag.tolerance_used = tol;
    diag.z_clamp_used = quadratic ? z_clamp : 0.0;
    diag.bounds = bounds;

    TriField ycal, zcal;
    double damping = config.damping;
    bool converged = false;
    int iterations = 0;

    for (int n = 1; n <= config.max_iterations; ++n) {
        auto [yc, zc] = detail::inner_family_impl(problem, y_flow, stats, z_clamp);
        NodeField y_new = diagonal_of(yc, M);

        const double diff =
            detail::weighted_norm_diff(y_new, y_flow, zc, z_flow, ens, grid, beta);
        diag.norm_trail.push_back(diff);
        iterations = n;

        // Oscillation guard for the quadratic classes: two consecutive
        // increases of the norm trail switch on damping.
        if (quadratic && damping >= 1.0) {
            const auto& trail = diag.norm_trail;
            if (trail.size() >= 3 && trail[trail.size() - 1] > trail[trail.size() - 2] &&
                trail[trail.size() - 2] > trail[trail.size() - 3]) {
                damping = 0.5;
                diag.damping_engaged = true;
            }
        }

        ycal = std::move(yc);
        zcal = std::move(zc);

        if (damping < 1.0 && n > 1) {
            for (int k = 0; k <= M; ++k)
                for (std::size_t s = 0; s < y_flow.values[static_cast<std::size_t>(k)].size(); ++s)
                    y_flow.values[static_cast<std::size_t>(k)][s] =
                        (1.0 - damping) * y_flow.values[static_cast<std::size_t>(k)][s] +
                        damping * y_new.values[static_cast<std::size_t>(k)][s];
            for (std::size_t f = 0; f < z_flow.values.size(); ++f)
                for (std::size_t s = 0; s < z_flow.values[f].size(); ++s)
                    z_flow.values[f][s] = (1.0 - damping) * z_flow.values[f][s] +
                                          damping * zcal.values[f][s];
        } else {
            y_flow = std::move(y_new);
            z_flow = zcal;
        }
        stats = detail::stats_from_fields(y_flow, z_flow, ens);

        if (diff < tol) {
            converged = true;
            break;
        }
    }

    SolutionField out;
    out.steps = M;
    out.horizon = grid.horizon;
    out.dimension = d;
    out.Y = diagonal_of(ycal, M);
    out.Z = std::move(zcal);
    out.laws = detail::laws_from_fields(out.Y, out.Z, ens, d);
    diag.iterations = iterations;
    diag.converged = converged;

    // Monitors against the a-priori ladder (quadratic classes).
    if (quadratic && bounds) {
        MonitorReport mon;
        mon.enabled = true;
        const bool bounded_cls = cls == GrowthClass::quadratic_bounded_law;
        mon.y_bound = bounded_cls ? bounds->m1_bar.value_or(kInf)
                                  : bounds->m1_global.value_or(kInf);
        double max_abs = 0.0;
        for (const auto& slice : out.Y.values)
            for (double v : slice) max_abs = std::max(max_abs, std::abs(v));
        mon.max_abs_y = max_abs;
        mon.y_breached = max_abs > mon.y_bound;
        mon.bmo_bound = bounded_cls ? bounds->m2_bar.value_or(kInf)
                                    : bounds->m2_global.value_or(kInf);
        mon.bmo_value = bmo_proxy(out, problem.engine, ens);
        mon.bmo_breached = mon.bmo_value > mon.bmo_bound;
        diag.monitors = mon;
    }
    out.diagnostics = diag;

    if (!converged) {
        std::ostringstream os;
        os << "picard_solve: no convergence after " << config.max_iterations
           << " iterations (last norm diff " << diag.norm_trail.back() << ")";
        throw NonConvergenceError(os.str(), std::move(out));
    }
    return out;
}

double bmo_proxy(const SolutionField& solution, const CondExpEngine& engine,
                 const NoiseEnsemble& ensemble) {
    const int M = solution.steps;
    const int d = solution.dimension;
    const TriangularIndex tri(M);
    const double dt = solution.horizon / M;
    const bool lattice = ensemble.mode() == NoiseMode::lattice;
    double proxy = 0.0;

    for (int i = 0; i <= M; ++i) {
        if (lattice) {
            // Backward exact recursion: B_k = |Z(i,k)|^2 dt + E_k[B_{k+1}].
            std::vector<double> b(static_cast<std::size_t>(ensemble.states_at(M)), 0.0);
            for (int k = M - 1; k >= i; --k) {
                std::vector<double> next = condexp(engine, ensemble, k, b);
                const auto& z = solution.Z.values[tri.flat(i, k)];
                for (int s = 0; s < ensemble.states_at(k); ++s) {
                    double n2 = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double v = z[static_cast<std::size_t>(s) * d + c];
                        n2 += v * v;
                    }
                    next[static_cast<std::size_t>(s)] += n2 * dt;
                    proxy = std::max(proxy, next[static_cast<std::size_t>(s)]);
                }
                b = std::move(next);
            }
        } else {
            const int P = ensemble.scenario_count();
            std::vector<double> tail(static_cast<std::size_t>(P), 0.0);
            for (int k = M - 1; k >= i; --k) {
                const auto& z = solution.Z.values[tri.flat(i, k)];
                for (int p = 0; p < P; ++p) {
                    double n2 = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double v = z[static_cast<std::size_t>(p) * d + c];
                        n2 += v * v;
                    }
                    tail[static_cast<std::size_t>(p)] += n2 * dt;
                }
                const auto cond = condexp(engine, ensemble, k, tail, M);
                for (double v : cond) proxy = std::max(proxy, v);
            }
        }
    }
    return proxy;
}

} // namespace bsvie
