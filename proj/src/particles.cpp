#include "bsvie/particles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "bsvie/numeric.hpp"
#include "bsvie/parallel.hpp"

namespace bsvie {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<int> resolve_stream_ids(int particles, const ParticleSolveOptions& options) {
    if (options.stream_ids.empty()) {
        std::vector<int> ids(static_cast<std::size_t>(particles));
        std::iota(ids.begin(), ids.end(), 0);
        return ids;
    }
    if (static_cast<int>(options.stream_ids.size()) != particles)
        throw ValidationError("solve_particles: stream_ids must have one entry per particle");
    std::vector<int> sorted = options.stream_ids;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < particles; ++i)
        if (sorted[static_cast<std::size_t>(i)] != i)
            throw ValidationError("solve_particles: stream_ids must be a permutation of 0..N-1");
    return options.stream_ids;
}

void validate_particle_problem(const Problem& problem) {
    if (problem.engine.backend != CondExpBackend::regression)
        throw ValidationError(
            "solve_particles: the joint N-driver filtration requires the regression backend");
    if (!problem.generator.chaos_supported())
        throw ValidationError(
            "solve_particles: quadratic drivers depending on the law of Z are not covered "
            "by the chaos results");
}

void clamp_vector(std::vector<double>& z, double r) {
    double n2 = 0.0;
    for (double c : z) n2 += c * c;
    const double n = std::sqrt(n2);
    if (n > r && n > 0.0) {
        const double s = r / n;
        for (double& c : z) c *= s;
    }
}

/// Monomial columns of one driver block (degrees 1..degree), used to extend
/// a fit with a second particle's state for cross-driver regressions.
std::vector<std::vector<double>> block_monomials(const NoiseEnsemble& ens, int k, int offset,
                                                 int dim, int degree) {
    const auto exps = detail::monomial_exponents(dim, degree);
    std::vector<std::vector<double>> cols;
    const int P = ens.scenario_count();
    for (const auto& e : exps) {
        int total = 0;
        for (int x : e) total += x;
        if (total == 0) continue; // constant already present
        std::vector<double> col(static_cast<std::size_t>(P));
        for (int p = 0; p < P; ++p) {
            double v = 1.0;
            for (int c = 0; c < dim; ++c)
                for (int rep = 0; rep < e[static_cast<std::size_t>(c)]; ++rep)
                    v *= ens.brownian(k, p, offset + c);
            col[static_cast<std::size_t>(p)] = v;
        }
        cols.push_back(std::move(col));
    }
    return cols;
}

} // namespace

EmpiricalMeasure ParticleSolution::empirical_mu(int k, int scenario) const {
    std::vector<double> pts(static_cast<std::size_t>(particles));
    for (int j = 0; j < particles; ++j)
        pts[static_cast<std::size_t>(j)] =
            mu_flow[static_cast<std::size_t>(k)][static_cast<std::size_t>(scenario) * particles + j];
    return EmpiricalMeasure::uniform(1, std::move(pts));
}

EmpiricalMeasure ParticleSolution::empirical_nu(int i, int k, int scenario) const {
    const TriangularIndex tri(steps);
    std::vector<double> pts(static_cast<std::size_t>(particles) * dimension);
    for (int j = 0; j < particles; ++j) {
        const auto& cell = Z[static_cast<std::size_t>(j)].values[tri.flat(i, k)];
        for (int c = 0; c < dimension; ++c)
            pts[static_cast<std::size_t>(j) * dimension + c] =
                cell[static_cast<std::size_t>(scenario) * dimension + c];
    }
    return EmpiricalMeasure::uniform(dimension, std::move(pts));
}

ParticleSolution solve_particles(int particles, const Problem& problem,
                                 const PicardConfig& config, std::uint64_t seed,
                                 const ParticleSolveOptions& options) {
    if (particles < 1) throw ValidationError("solve_particles: N must be positive");
    validate_particle_problem(problem);
    const std::vector<int> streams = resolve_stream_ids(particles, options);

    const TimeGrid& grid = problem.grid;
    const int M = grid.steps;
    const int d = problem.dimension;
    const int P = options.scenarios;
    const int N = particles;
    const TriangularIndex tri(M);
    const bool quadratic = problem.generator.growth_class() != GrowthClass::linear;
    const bool interacting = problem.generator.uses_law_of_y() || problem.generator.uses_law_of_z();
    const SingularKind singular = problem.generator.singular_kind();
    const double ell_coeff =
        singular == SingularKind::none ? 0.0 : problem.generator.coeff("ell_coeff");
    const double z_clamp = quadratic ? detail::resolve_z_clamp(problem, config) : kInf;

    const NoiseEnsemble ens = NoiseEnsemble::sample_paths(grid, N * d, P, seed);

    ParticleSolution sol;
    sol.particles = N;
    sol.scenarios = P;
    sol.steps = M;
    sol.horizon = grid.horizon;
    sol.dimension = d;
    sol.seed = seed;
    sol.stream_ids = streams;
    sol.Y.resize(static_cast<std::size_t>(N));
    sol.Z.resize(static_cast<std::size_t>(N));
    sol.has_offdiagonals = options.offdiagonals;
    if (options.offdiagonals)
        sol.Z_off.assign(static_cast<std::size_t>(N),
                         std::vector<TriField>(static_cast<std::size_t>(N)));
    sol.mu_flow.assign(static_cast<std::size_t>(M) + 1,
                       std::vector<double>(static_cast<std::size_t>(P) * N, 0.0));

    for (int i = 0; i < N; ++i) {
        sol.Y[static_cast<std::size_t>(i)].values.assign(
            static_cast<std::size_t>(M) + 1, std::vector<double>(static_cast<std::size_t>(P), 0.0));
        sol.Z[static_cast<std::size_t>(i)].steps = M;
        sol.Z[static_cast<std::size_t>(i)].dim = d;
        sol.Z[static_cast<std::size_t>(i)].values.assign(
            tri.size(), std::vector<double>(static_cast<std::size_t>(P) * d, 0.0));
        if (options.offdiagonals) {
            for (int j = 0; j < N; ++j) {
                if (j == i) continue;
                auto& f = sol.Z_off[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                f.steps = M;
                f.dim = d;
                f.values.assign(tri.size(), std::vector<double>(static_cast<std::size_t>(P) * d, 0.0));
            }
        }
    }

    // value[i][r] = current Ycal^{N,i}(t_r, t_{k+1}) while sweeping step k.
    std::vector<std::vector<std::vector<double>>> value(
        static_cast<std::size_t>(N),
        std::vector<std::vector<double>>(static_cast<std::size_t>(M) + 1));
    std::vector<double> wT(static_cast<std::size_t>(d));
    for (int i = 0; i < N; ++i) {
        const int block = streams[static_cast<std::size_t>(i)];
        std::vector<double> psi_terminal(static_cast<std::size_t>(P));
        for (int r = 0; r <= M; ++r) {
            for (int p = 0; p < P; ++p) {
                for (int c = 0; c < d; ++c)
                    wT[static_cast<std::size_t>(c)] = ens.brownian(M, p, block * d + c);
                psi_terminal[static_cast<std::size_t>(p)] =
                    problem.free_term.eval(grid.nodes[static_cast<std::size_t>(r)], wT);
            }
            value[static_cast<std::size_t>(i)][static_cast<std::size_t>(r)] = psi_terminal;
        }
        sol.Y[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(M)] =
            value[static_cast<std::size_t>(i)][static_cast<std::size_t>(M)];
    }
    for (int p = 0; p < P; ++p)
        for (int j = 0; j < N; ++j)
            sol.mu_flow[static_cast<std::size_t>(M)][static_cast<std::size_t>(p) * N + j] =
                value[static_cast<std::size_t>(j)][static_cast<std::size_t>(M)][static_cast<std::size_t>(p)];

    // Scratch held across steps.
    std::vector<std::vector<double>> cond(static_cast<std::size_t>(N));   // per particle, rows glued
    std::vector<std::vector<double>> zrows(static_cast<std::size_t>(N));  // per particle, rows glued
    std::vector<double> m1(static_cast<std::size_t>(P)), m2(static_cast<std::size_t>(P));
    std::vector<double> diag_cur(static_cast<std::size_t>(N) * P);
    std::vector<double> diag_next(static_cast<std::size_t>(N) * P);
    std::vector<double> bucket(static_cast<std::size_t>(N));

    for (int k = M - 1; k >= 0; --k) {
        const double t_k = grid.nodes[static_cast<std::size_t>(k)];
        const double s_mid = t_k + 0.5 * grid.dt;
        const int rows = k + 1;

        // Pass A: conditioned diagonal estimates on own-driver features only;
        // their symmetric moments become the interaction features of pass B.
        if (interacting) {
            std::vector<std::vector<double>> diag0(static_cast<std::size_t>(N));
            parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
                const int block = streams[j];
                RegressionFit fit(ens, k, FeatureSpec{block * d, d, {}}, problem.engine.regression);
                diag0[j] = fit.apply(value[j][static_cast<std::size_t>(k)]);
            });
            for (int p = 0; p < P; ++p) {
                for (int j = 0; j < N; ++j)
                    bucket[static_cast<std::size_t>(j)] = diag0[static_cast<std::size_t>(j)][static_cast<std::size_t>(p)];
                m1[static_cast<std::size_t>(p)] = stable_mean(bucket);
                m2[static_cast<std::size_t>(p)] = stable_mean_sq(bucket);
            }
        }

        // Pass B: one factorization per particle, applied to every row target
        // and to the increment-regression targets for Z.
        parallel_for(static_cast<std::size_t>(N), [&](std::size_t i) {
            const int block = streams[i];
            FeatureSpec spec{block * d, d, {}};
            if (interacting) {
                spec.extra_columns.push_back(std::span<const double>(m1));
                spec.extra_columns.push_back(std::span<const double>(m2));
            }
            RegressionFit fit(ens, k, spec, problem.engine.regression);

            cond[i].assign(static_cast<std::size_t>(rows) * P, 0.0);
            zrows[i].assign(static_cast<std::size_t>(rows) * P * d, 0.0);
            std::vector<double> tgt(static_cast<std::size_t>(P));
            const double inv_dt = 1.0 / grid.dt;
            for (int r = 0; r < rows; ++r) {
                const auto& v_next = value[i][static_cast<std::size_t>(r)];
                const auto c = fit.apply(v_next);
                std::copy(c.begin(), c.end(), cond[i].begin() + static_cast<std::ptrdiff_t>(r) * P);
                for (int cc = 0; cc < d; ++cc) {
                    for (int p = 0; p < P; ++p)
                        tgt[static_cast<std::size_t>(p)] =
                            (v_next[static_cast<std::size_t>(p)] - c[static_cast<std::size_t>(p)]) *
                            ens.increment(k, p, block * d + cc) * inv_dt;
                    const auto fitted = fit.apply(tgt);
                    for (int p = 0; p < P; ++p)
                        zrows[i][(static_cast<std::size_t>(r) * P + p) * d + cc] =
                            fitted[static_cast<std::size_t>(p)];
                }
            }
        });

        // Store Z^{N,i,i}(t_r, t_k) for all rows now; the law of Z at this
        // step is fixed from here on.
        for (int i = 0; i < N; ++i)
            for (int r = 0; r < rows; ++r)
                for (int p = 0; p < P; ++p)
                    for (int c = 0; c < d; ++c)
                        sol.Z[static_cast<std::size_t>(i)].values[tri.flat(r, k)]
                            [static_cast<std::size_t>(p) * d + c] =
                            zrows[static_cast<std::size_t>(i)]
                                 [(static_cast<std::size_t>(r) * P + p) * d + c];

        // Cross-driver integrands on request: particle i's value against the
        // increments of driver j, with both blocks' states as features.
        if (options.offdiagonals) {
            parallel_for(static_cast<std::size_t>(N) * N, [&](std::size_t idx) {
                const int i = static_cast<int>(idx / static_cast<std::size_t>(N));
                const int j = static_cast<int>(idx % static_cast<std::size_t>(N));
                if (i == j) return;
                const int bi = streams[static_cast<std::size_t>(i)];
                const int bj = streams[static_cast<std::size_t>(j)];
                const auto extra = block_monomials(ens, k, bj * d, d,
                                                   problem.engine.regression.degree);
                FeatureSpec spec{bi * d, d, {}};
                for (const auto& col : extra) spec.extra_columns.push_back(col);
                if (interacting) {
                    spec.extra_columns.push_back(std::span<const double>(m1));
                    spec.extra_columns.push_back(std::span<const double>(m2));
                }
                RegressionFit fit(ens, k, spec, problem.engine.regression);
                std::vector<double> tgt(static_cast<std::size_t>(P));
                const double inv_dt = 1.0 / grid.dt;
                for (int r = 0; r < rows; ++r) {
                    auto& cell =
                        sol.Z_off[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]
                            .values[tri.flat(r, k)];
                    for (int cc = 0; cc < d; ++cc) {
                        for (int p = 0; p < P; ++p)
                            tgt[static_cast<std::size_t>(p)] =
                                (value[static_cast<std::size_t>(i)][static_cast<std::size_t>(r)]
                                      [static_cast<std::size_t>(p)] -
                                 cond[static_cast<std::size_t>(i)]
                                     [static_cast<std::size_t>(r) * P + p]) *
                                ens.increment(k, p, bj * d + cc) * inv_dt;
                        const auto fitted = fit.apply(tgt);
                        for (int p = 0; p < P; ++p)
                            cell[static_cast<std::size_t>(p) * d + cc] =
                                fitted[static_cast<std::size_t>(p)];
                    }
                }
            });
        }

        // Per-step fixed point on the diagonal slice: all particles depend on
        // the empirical measure of the very values being computed.
        // Initialized at the step-(k+1) values.
        for (int j = 0; j < N; ++j)
            for (int p = 0; p < P; ++p)
                diag_cur[static_cast<std::size_t>(j) * P + p] =
                    value[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)][static_cast<std::size_t>(p)];

        std::vector<double> nu_diag(static_cast<std::size_t>(P));
        std::vector<double> zc(static_cast<std::size_t>(d));
        for (int p = 0; p < P; ++p) {
            for (int j = 0; j < N; ++j) {
                double n2 = 0.0;
                for (int c = 0; c < d; ++c) {
                    const double v = zrows[static_cast<std::size_t>(j)]
                                          [(static_cast<std::size_t>(k) * P + p) * d + c];
                    n2 += v * v;
                }
                bucket[static_cast<std::size_t>(j)] = n2;
            }
            nu_diag[static_cast<std::size_t>(p)] = std::sqrt(stable_mean(bucket));
        }

        double ell_diag = 0.0;
        if (singular != SingularKind::none)
            ell_diag = ell_coeff *
                       integrate_singular_weight(singular, t_k, t_k, t_k + grid.dt) / grid.dt;

        for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
            double max_change = 0.0, max_scale = 1.0;
            for (int p = 0; p < P; ++p) {
                for (int j = 0; j < N; ++j)
                    bucket[static_cast<std::size_t>(j)] = diag_cur[static_cast<std::size_t>(j) * P + p];
                LawStats stats;
                stats.mean_mu = stable_mean(bucket);
                stats.w2_mu0 = std::sqrt(stable_mean_sq(bucket));
                stats.w2_nu0 = nu_diag[static_cast<std::size_t>(p)];
                for (int j = 0; j < N; ++j) {
                    for (int c = 0; c < d; ++c)
                        zc[static_cast<std::size_t>(c)] =
                            zrows[static_cast<std::size_t>(j)][(static_cast<std::size_t>(k) * P + p) * d + c];
                    if (quadratic) clamp_vector(zc, z_clamp);
                    const double g = problem.generator.eval_with_ell(
                        t_k, s_mid, diag_cur[static_cast<std::size_t>(j) * P + p], zc, stats,
                        ell_diag);
                    const double next =
                        cond[static_cast<std::size_t>(j)][static_cast<std::size_t>(k) * P + p] +
                        grid.dt * g;
                    diag_next[static_cast<std::size_t>(j) * P + p] = next;
                    max_change = std::max(max_change,
                                          std::abs(next - diag_cur[static_cast<std::size_t>(j) * P + p]));
                    max_scale = std::max(max_scale, std::abs(next));
                }
            }
            std::swap(diag_cur, diag_next);
            if (max_change <= options.sweep_tol * max_scale) break;
        }

        // Final interaction statistics at this step.
        std::vector<double> mu_w2(static_cast<std::size_t>(P)), mu_mean(static_cast<std::size_t>(P));
        for (int p = 0; p < P; ++p) {
            for (int j = 0; j < N; ++j)
                bucket[static_cast<std::size_t>(j)] = diag_cur[static_cast<std::size_t>(j) * P + p];
            mu_mean[static_cast<std::size_t>(p)] = stable_mean(bucket);
            mu_w2[static_cast<std::size_t>(p)] = std::sqrt(stable_mean_sq(bucket));
        }

        // Commit the diagonal and update every remaining row with the settled
        // measures; the y argument is the particle's own diagonal value.
        for (int i = 0; i < N; ++i) {
            auto& vk = value[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
            for (int p = 0; p < P; ++p) vk[static_cast<std::size_t>(p)] = diag_cur[static_cast<std::size_t>(i) * P + p];
            if (!all_finite(vk)) {
                std::ostringstream os;
                os << "particle " << i << " diverged at diagonal cell (" << k << ", " << k << ")";
                throw DivergenceError(os.str());
            }
            sol.Y[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(k)] = vk;
            for (int p = 0; p < P; ++p)
                sol.mu_flow[static_cast<std::size_t>(k)][static_cast<std::size_t>(p) * N + i] =
                    vk[static_cast<std::size_t>(p)];
        }

        std::vector<double> nu_row(static_cast<std::size_t>(P));
        for (int r = 0; r < k; ++r) {
            const double t_r = grid.nodes[static_cast<std::size_t>(r)];
            const double ell_row = singular == SingularKind::none
                                       ? 0.0
                                       : problem.generator.ell_pointwise(t_r, s_mid);
            for (int p = 0; p < P; ++p) {
                for (int j = 0; j < N; ++j) {
                    double n2 = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double v = zrows[static_cast<std::size_t>(j)]
                                              [(static_cast<std::size_t>(r) * P + p) * d + c];
                        n2 += v * v;
                    }
                    bucket[static_cast<std::size_t>(j)] = n2;
                }
                nu_row[static_cast<std::size_t>(p)] = std::sqrt(stable_mean(bucket));
            }
            for (int i = 0; i < N; ++i) {
                auto& vr = value[static_cast<std::size_t>(i)][static_cast<std::size_t>(r)];
                for (int p = 0; p < P; ++p) {
                    LawStats stats;
                    stats.mean_mu = mu_mean[static_cast<std::size_t>(p)];
                    stats.w2_mu0 = mu_w2[static_cast<std::size_t>(p)];
                    stats.w2_nu0 = nu_row[static_cast<std::size_t>(p)];
                    for (int c = 0; c < d; ++c)
                        zc[static_cast<std::size_t>(c)] =
                            zrows[static_cast<std::size_t>(i)][(static_cast<std::size_t>(r) * P + p) * d + c];
                    if (quadratic) clamp_vector(zc, z_clamp);
                    const double g = problem.generator.eval_with_ell(
                        t_r, s_mid, diag_cur[static_cast<std::size_t>(i) * P + p], zc, stats,
                        ell_row);
                    vr[static_cast<std::size_t>(p)] =
                        cond[static_cast<std::size_t>(i)][static_cast<std::size_t>(r) * P + p] +
                        grid.dt * g;
                }
                if (!all_finite(vr)) {
                    std::ostringstream os;
                    os << "particle " << i << " diverged at cell (" << r << ", " << k << ")";
                    throw DivergenceError(os.str());
                }
            }
        }
    }

    return sol;
}

CoupledCopies solve_coupled_copies(const SolutionField& reference, int particles,
                                   const Problem& problem, const PicardConfig& config,
                                   std::uint64_t seed, const ParticleSolveOptions& options) {
    if (particles < 1) throw ValidationError("solve_coupled_copies: N must be positive");
    if (problem.engine.backend != CondExpBackend::regression)
        throw ValidationError("solve_coupled_copies: regression backend required");
    if (reference.steps != problem.grid.steps ||
        std::abs(reference.horizon - problem.grid.horizon) > 1e-12 * problem.grid.horizon)
        throw ValidationError("solve_coupled_copies: reference grid does not match the problem");

    const std::vector<int> streams = resolve_stream_ids(particles, options);
    const int d = problem.dimension;
    const auto ens = std::make_shared<NoiseEnsemble>(
        NoiseEnsemble::sample_paths(problem.grid, particles * d, options.scenarios, seed));
    const LawStatsFlow frozen = detail::stats_from_laws(reference.laws);

    CoupledCopies copies;
    copies.particles = particles;
    copies.scenarios = options.scenarios;
    copies.steps = problem.grid.steps;
    copies.horizon = problem.grid.horizon;
    copies.dimension = d;
    copies.seed = seed;
    copies.stream_ids = streams;
    copies.Y.resize(static_cast<std::size_t>(particles));
    copies.Z.resize(static_cast<std::size_t>(particles));

    parallel_for(static_cast<std::size_t>(particles), [&](std::size_t i) {
        Problem per = problem;
        per.ensemble = ens;
        per.stream_block = streams[i];
        const auto run = detail::picard_solve_frozen(per, frozen, config);
        copies.Y[i] = run.Y;
        copies.Z[i] = run.Z;
    });
    return copies;
}

double offdiag_energy(const ParticleSolution& solution, int particle) {
    if (!solution.has_offdiagonals)
        throw UnsupportedError("offdiag_energy: off-diagonal fields were not requested");
    if (particle < 0 || particle >= solution.particles)
        throw ValidationError("offdiag_energy: particle index out of range");
    const int M = solution.steps;
    const int N = solution.particles;
    const int P = solution.scenarios;
    const int d = solution.dimension;
    const double dt = solution.horizon / M;
    const TriangularIndex tri(M);

    double total = 0.0;
    for (int r = 0; r < M; ++r) {
        for (int k = r; k < M; ++k) {
            double cell_mean = 0.0;
            for (int p = 0; p < P; ++p) {
                std::vector<double> terms;
                terms.reserve(static_cast<std::size_t>(N - 1));
                for (int j = 0; j < N; ++j) {
                    if (j == particle) continue;
                    const auto& cell = solution
                                           .Z_off[static_cast<std::size_t>(particle)]
                                                 [static_cast<std::size_t>(j)]
                                           .values[tri.flat(r, k)];
                    double n2 = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double v = cell[static_cast<std::size_t>(p) * d + c];
                        n2 += v * v;
                    }
                    terms.push_back(n2);
                }
                cell_mean += stable_sum(std::move(terms));
            }
            total += cell_mean / P * dt * dt;
        }
    }
    return total;
}

} // namespace bsvie
