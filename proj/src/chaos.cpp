#include "bsvie/chaos.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bsvie/noise.hpp"
#include "bsvie/numeric.hpp"
#include "bsvie/parallel.hpp"

namespace bsvie {

namespace {

// Two-sided 97.5% Student quantiles for small residual degrees of freedom.
double t_quantile_975(int df) {
    static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365,
                                   2.306,  2.262, 2.228, 2.201, 2.179, 2.160, 2.145,
                                   2.131,  2.120, 2.110, 2.101, 2.093, 2.086};
    if (df < 1) return std::numeric_limits<double>::infinity();
    if (df <= 20) return table[df - 1];
    return 1.96;
}

std::uint64_t job_seed(std::uint64_t base, int n_value, int replication) {
    return detail::counter_hash(base, static_cast<std::uint64_t>(n_value),
                                static_cast<std::uint64_t>(replication), 0x9E37u);
}

} // namespace

std::string variant_name(MetricVariant v) {
    switch (v) {
        case MetricVariant::integral: return "integral";
        case MetricVariant::integral_z_free: return "integral-z-free";
        case MetricVariant::sup_t: return "sup";
    }
    return "?";
}

MetricVariant variant_from_name(const std::string& name) {
    if (name == "integral") return MetricVariant::integral;
    if (name == "integral-z-free") return MetricVariant::integral_z_free;
    if (name == "sup") return MetricVariant::sup_t;
    throw ValidationError("unknown study variant '" + name + "'");
}

double theoretical_exponent(double p, int d) {
    if (!(p > 1.0 && p < 2.0))
        throw ValidationError("theoretical_exponent: p must lie in (1, 2)");
    if (d < 1) throw ValidationError("theoretical_exponent: d must be positive");
    const double half = (2.0 - p) / 2.0;
    if (d <= 3) return -half;
    return -std::min(p / d, half);
}

std::vector<double> error_metric(const ParticleSolution& parts, const CoupledCopies& copies,
                                 double p, MetricVariant variant) {
    if (parts.particles != copies.particles || parts.scenarios != copies.scenarios ||
        parts.steps != copies.steps)
        throw ValidationError("error_metric: particle system and copies have different shapes");
    if (parts.seed != copies.seed || parts.stream_ids != copies.stream_ids)
        throw ValidationError("error_metric: driver streams do not match; the coupling requires "
                              "shared Brownian drivers");

    const int N = parts.particles;
    const int P = parts.scenarios;
    const int M = parts.steps;
    const int d = parts.dimension;
    const double dt = parts.horizon / M;
    const TriangularIndex tri(M);

    std::vector<double> out(static_cast<std::size_t>(N), 0.0);
    for (int i = 0; i < N; ++i) {
        // inner[r][p] = sum_{k >= r} sum_j |dZ^{i,j}(t_r, t_k)|^2 dt
        std::vector<std::vector<double>> inner(static_cast<std::size_t>(M) + 1,
                                               std::vector<double>(static_cast<std::size_t>(P), 0.0));
        for (int r = 0; r <= M; ++r) {
            for (int k = r; k < M; ++k) {
                const auto& zp = parts.Z[static_cast<std::size_t>(i)].values[tri.flat(r, k)];
                const auto& zc = copies.Z[static_cast<std::size_t>(i)].values[tri.flat(r, k)];
                for (int q = 0; q < P; ++q) {
                    double sum_j = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double dz = zp[static_cast<std::size_t>(q) * d + c] -
                                          zc[static_cast<std::size_t>(q) * d + c];
                        sum_j += dz * dz;
                    }
                    if (parts.has_offdiagonals) {
                        std::vector<double> terms;
                        terms.reserve(static_cast<std::size_t>(N - 1));
                        for (int j = 0; j < N; ++j) {
                            if (j == i) continue;
                            const auto& cell = parts.Z_off[static_cast<std::size_t>(i)]
                                                          [static_cast<std::size_t>(j)]
                                                              .values[tri.flat(r, k)];
                            double n2 = 0.0;
                            for (int c = 0; c < d; ++c) {
                                const double v = cell[static_cast<std::size_t>(q) * d + c];
                                n2 += v * v;
                            }
                            terms.push_back(n2);
                        }
                        sum_j += stable_sum(std::move(terms));
                    }
                    inner[static_cast<std::size_t>(r)][static_cast<std::size_t>(q)] += sum_j * dt;
                }
            }
        }

        const auto mean_abs_dy_p = [&](int k) {
            const auto& yp = parts.Y[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(k)];
            const auto& yc = copies.Y[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(k)];
            double acc = 0.0;
            for (int q = 0; q < P; ++q)
                acc += std::pow(std::abs(yp[static_cast<std::size_t>(q)] -
                                         yc[static_cast<std::size_t>(q)]),
                                p);
            return acc / P;
        };
        const auto mean_inner_p2 = [&](int r) {
            double acc = 0.0;
            for (int q = 0; q < P; ++q)
                acc += std::pow(inner[static_cast<std::size_t>(r)][static_cast<std::size_t>(q)],
                                p / 2.0);
            return acc / P;
        };

        if (variant == MetricVariant::sup_t) {
            double best = 0.0;
            for (int r = 0; r <= M; ++r)
                best = std::max(best, mean_abs_dy_p(r) + mean_inner_p2(r));
            out[static_cast<std::size_t>(i)] = best;
        } else {
            double total = 0.0;
            for (int k = 0; k < M; ++k) total += mean_abs_dy_p(k) * dt;
            for (int r = 0; r < M; ++r) total += mean_inner_p2(r) * dt;
            out[static_cast<std::size_t>(i)] = total;
        }
    }
    return out;
}

SlopeFit fit_loglog(const std::vector<double>& ns, const std::vector<double>& means) {
    if (ns.size() != means.size() || ns.size() < 2)
        throw ValidationError("fit_loglog: need at least two points");
    const int n = static_cast<int>(ns.size());
    std::vector<double> xs(ns.size()), ys(ns.size());
    for (std::size_t i = 0; i < ns.size(); ++i) {
        if (!(means[i] > 0.0))
            throw ValidationError("fit_loglog: error means must be positive for a log fit");
        xs[i] = std::log10(ns[i]);
        ys[i] = std::log10(means[i]);
    }
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
        mx += xs[static_cast<std::size_t>(i)];
        my += ys[static_cast<std::size_t>(i)];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < n; ++i) {
        sxx += (xs[static_cast<std::size_t>(i)] - mx) * (xs[static_cast<std::size_t>(i)] - mx);
        sxy += (xs[static_cast<std::size_t>(i)] - mx) * (ys[static_cast<std::size_t>(i)] - my);
    }
    SlopeFit fit;
    fit.slope = sxy / sxx;
    if (n == 2) {
        fit.half_width = std::numeric_limits<double>::infinity();
        return fit;
    }
    double rss = 0.0;
    const double intercept = my - fit.slope * mx;
    for (int i = 0; i < n; ++i) {
        const double r =
            ys[static_cast<std::size_t>(i)] - (intercept + fit.slope * xs[static_cast<std::size_t>(i)]);
        rss += r * r;
    }
    const double se = std::sqrt(rss / (n - 2) / sxx);
    fit.half_width = t_quantile_975(n - 2) * se;
    return fit;
}

ConvergenceReport run_study(const StudyConfig& study, const Problem& problem,
                            const PicardConfig& picard) {
    if (study.particle_counts.empty())
        throw ValidationError("run_study: no particle counts given");
    for (std::size_t i = 1; i < study.particle_counts.size(); ++i)
        if (study.particle_counts[i] <= study.particle_counts[i - 1])
            throw ValidationError("run_study: the N list must be strictly increasing");
    if (study.replications < 1) throw ValidationError("run_study: K must be >= 1");
    if (!problem.generator.chaos_supported())
        throw ValidationError(
            "run_study: the generator is chaos-unsupported (quadratic drivers must be "
            "independent of the law of Z)");

    switch (study.variant) {
        case MetricVariant::integral:
            if (problem.generator.uses_law_of_z() && !(study.p > 1.0 && study.p < 2.0))
                throw ValidationError(
                    "run_study: drivers depending on the law of Z require 1 < p < 2 for the "
                    "integral metric");
            if (!(study.p > 1.0))
                throw ValidationError("run_study: p must exceed 1");
            break;
        case MetricVariant::integral_z_free:
            if (problem.generator.uses_law_of_z())
                throw ValidationError(
                    "run_study: the integral-z-free variant requires a driver independent of "
                    "the law of Z");
            if (!(study.p > 1.0))
                throw ValidationError("run_study: p must exceed 1");
            break;
        case MetricVariant::sup_t:
            if (!(study.p >= 2.0))
                throw ValidationError("run_study: the sup variant runs with p >= 2");
            break;
    }

    // Reference mean-field solve freezing the law flows: lattice when the
    // problem is one-dimensional (exact laws on the discrete tree), high-P
    // regression otherwise.
    std::string ref_backend = study.reference_backend;
    if (ref_backend.empty()) ref_backend = study.dimension == 1 ? "lattice" : "regression";
    Problem ref_problem = problem;
    ref_problem.stream_block = 0;
    if (ref_backend == "lattice") {
        if (study.dimension != 1)
            throw ValidationError("run_study: the lattice reference requires d = 1");
        ref_problem.engine.backend = CondExpBackend::lattice_exact;
        ref_problem.ensemble = std::make_shared<NoiseEnsemble>(NoiseEnsemble::build_lattice(
            problem.grid, std::max(kDefaultLatticeCap, problem.grid.steps)));
    } else if (ref_backend == "regression") {
        ref_problem.engine.backend = CondExpBackend::regression;
        ref_problem.ensemble = std::make_shared<NoiseEnsemble>(NoiseEnsemble::sample_paths(
            problem.grid, study.dimension, study.reference_scenarios,
            study.base_seed ^ 0xFEEDFACEULL));
    } else {
        throw ValidationError("run_study: unknown reference backend '" + ref_backend + "'");
    }
    const SolutionField reference = picard_solve(ref_problem, picard);

    ConvergenceReport report;
    report.variant = variant_name(study.variant);
    report.p = study.p;
    report.dimension = study.dimension;
    report.base_seed = study.base_seed;
    report.reference_backend = ref_backend;
    report.reference_scenarios = ref_backend == "regression" ? study.reference_scenarios : 0;
    report.z_term = study.offdiagonals ? "full" : "diagonal-only";

    const int K = study.replications;
    const int njobs = static_cast<int>(study.particle_counts.size()) * K;
    std::vector<std::vector<RawError>> job_raw(static_cast<std::size_t>(njobs));
    std::vector<double> job_mean(static_cast<std::size_t>(njobs), 0.0);
    report.job_seeds.assign(static_cast<std::size_t>(njobs), 0);

    Problem study_problem = problem;
    study_problem.engine.backend = CondExpBackend::regression;

    parallel_for(static_cast<std::size_t>(njobs), [&](std::size_t job) {
        const int n_idx = static_cast<int>(job) / K;
        const int rep = static_cast<int>(job) % K;
        const int N = study.particle_counts[static_cast<std::size_t>(n_idx)];
        const std::uint64_t seed = job_seed(study.base_seed, N, rep);
        report.job_seeds[job] = seed;

        ParticleSolveOptions opts;
        opts.scenarios = study.particle_scenarios;
        opts.offdiagonals = study.offdiagonals;

        const ParticleSolution parts = solve_particles(N, study_problem, picard, seed, opts);
        const CoupledCopies copies =
            solve_coupled_copies(reference, N, study_problem, picard, seed, opts);
        const std::vector<double> errs = error_metric(parts, copies, study.p, study.variant);

        job_raw[job].reserve(errs.size());
        double mean = 0.0;
        for (int i = 0; i < N; ++i) {
            job_raw[job].push_back({N, rep, i, errs[static_cast<std::size_t>(i)]});
            mean += errs[static_cast<std::size_t>(i)];
        }
        job_mean[job] = mean / N;
    });

    for (const auto& rawset : job_raw)
        report.raw.insert(report.raw.end(), rawset.begin(), rawset.end());

    std::vector<double> ns, means;
    for (std::size_t n_idx = 0; n_idx < study.particle_counts.size(); ++n_idx) {
        ConvergenceSummary s;
        s.particles = study.particle_counts[n_idx];
        double m = 0.0;
        for (int rep = 0; rep < K; ++rep) m += job_mean[n_idx * K + static_cast<std::size_t>(rep)];
        m /= K;
        double var = 0.0;
        for (int rep = 0; rep < K; ++rep) {
            const double d0 = job_mean[n_idx * K + static_cast<std::size_t>(rep)] - m;
            var += d0 * d0;
        }
        s.mean = m;
        s.stderr_mean = K > 1 ? std::sqrt(var / (K - 1) / K) : 0.0;
        report.summary.push_back(s);
        ns.push_back(static_cast<double>(s.particles));
        means.push_back(s.mean);
    }

    if (ns.size() < 2) {
        report.insufficient_points = true;
    } else {
        const SlopeFit fit = fit_loglog(ns, means);
        report.slope = fit.slope;
        report.half_width = fit.half_width;
        if (study.variant == MetricVariant::sup_t && fit.slope != 0.0)
            report.lambda_hat = -1.0 / (2.0 * fit.slope);
    }
    if (study.p > 1.0 && study.p < 2.0)
        report.theory_exponent = theoretical_exponent(study.p, study.dimension);
    return report;
}

} // namespace bsvie
