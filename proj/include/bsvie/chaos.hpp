#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bsvie/particles.hpp"

namespace bsvie {

/// integral:        time-integrated metric, valid for 1 < p < 2 when the
///                  driver depends on the law of Z;
/// integral-z-free: same functional for drivers independent of the law of Z,
///                  valid for any p > 1;
/// sup:             sup-in-t metric for quadratic studies (p >= 2), reported
///                  together with lambda_hat = -1/(2 slope).
enum class MetricVariant { integral, integral_z_free, sup_t };

std::string variant_name(MetricVariant v);
MetricVariant variant_from_name(const std::string& name);

struct StudyConfig {
    std::vector<int> particle_counts;  // strictly increasing
    int replications = 1;              // K
    double p = 1.5;
    int dimension = 1;
    std::uint64_t base_seed = 0;
    int reference_scenarios = 16384;   // P_ref (regression reference only)
    std::string reference_backend;     // "", "lattice" or "regression"
    int particle_scenarios = 256;      // P per replication
    MetricVariant variant = MetricVariant::integral;
    bool offdiagonals = false;
};

struct ConvergenceSummary {
    int particles = 0;
    double mean = 0.0;
    double stderr_mean = 0.0;
};

struct RawError {
    int particles = 0;
    int replication = 0;
    int particle = 0;
    double error = 0.0;
};

struct ConvergenceReport {
    std::vector<RawError> raw;
    std::vector<ConvergenceSummary> summary;
    std::optional<double> slope;
    std::optional<double> half_width;       // 95% confidence half-width
    std::optional<double> theory_exponent;  // only in the 1 < p < 2 regime
    std::optional<double> lambda_hat;       // -1 / (2 slope), sup-metric studies
    bool insufficient_points = false;
    std::string z_term;                     // "full" or "diagonal-only"
    std::string variant;
    double p = 0.0;
    int dimension = 1;
    std::uint64_t base_seed = 0;
    std::vector<std::uint64_t> job_seeds;   // ordered by (N, replication)
    std::string reference_backend;
    int reference_scenarios = 0;
    std::string config_hash;                // filled by the CLI layer
};

/// Rate exponent of the empirical-measure error bound:
/// -(2-p)/2 for d <= 3 and -min{p/d, (2-p)/2} for d >= 4, valid for 1 < p < 2.
double theoretical_exponent(double p, int d);

/// Per-particle discrete error functional between the particle system and its
/// coupled copies. Integral variants use left-endpoint sums over the grid;
/// the sup variant takes the maximum over nodes.
std::vector<double> error_metric(const ParticleSolution& particles, const CoupledCopies& copies,
                                 double p, MetricVariant variant = MetricVariant::integral);

/// Least-squares slope of log10(mean error) against log10(N) with the
/// standard-regression confidence half-width.
struct SlopeFit {
    double slope = 0.0;
    double half_width = 0.0;
};
SlopeFit fit_loglog(const std::vector<double>& ns, const std::vector<double>& means);

ConvergenceReport run_study(const StudyConfig& study, const Problem& problem,
                            const PicardConfig& picard = {});

} // namespace bsvie
