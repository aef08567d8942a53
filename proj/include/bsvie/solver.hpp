#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bsvie/condexp.hpp"
#include "bsvie/generators.hpp"
#include "bsvie/measures.hpp"
#include "bsvie/noise.hpp"
#include "bsvie/time_grid.hpp"

namespace bsvie {

/// One mean-field problem instance. `stream_block` selects which block of
/// `d` ensemble coordinates drives the equation (0 for plain solves; block i
/// when the ensemble carries N particle drivers).
struct Problem {
    TimeGrid grid;
    GeneratorSpec generator = GeneratorSpec::builtin(GeneratorFamily::zero);
    FreeTermSpec free_term = FreeTermSpec::builtin(FreeTermFamily::constant);
    int dimension = 1;
    CondExpEngine engine;
    std::shared_ptr<const NoiseEnsemble> ensemble;
    int stream_block = 0;
};

struct PicardConfig {
    std::optional<double> tolerance;   // default 1e-6 lattice, 1e-4 regression
    int max_iterations = 50;
    std::optional<double> beta;        // default 16 L^2 T + 8 L^2 + 1 (linear)
    std::optional<double> z_clamp;     // quadratic classes; default from bounds
    double z_clamp_cap = 1e6;
    double damping = 1.0;              // in (0, 1]; 1 disables damping
};

/// Free parameters of the constants ladder for the unbounded-law class.
struct AprioriInputs {
    double eps0 = 0.5;
    std::optional<double> delta;
    std::optional<double> L0;
};

/// Evaluated a-priori bound formulas with per-field provenance.
struct BoundsRecord {
    GrowthClass growth_class = GrowthClass::linear;

    // bounded-law ladder
    std::optional<double> r1_local;      // 2 (K1 + sqrt(K2))
    std::optional<double> r2_local;      // (2/g^2) e^{2 g K1} + (4 sqrt(K2)/g) e^{2 g R1}
    std::optional<double> l_tilde;       // e^{(b^2 + b0^2 + 1) T} (K1^2 + K2 + 2)
    std::optional<double> theta0;        // L~ e^{L~ T}
    std::optional<double> m1_hat;
    std::optional<double> m1_bar;        // sup bound on |Y|^2
    std::optional<double> m2_bar;        // sup bound on the conditional Z energy
    std::optional<double> theta0_log10;
    std::optional<double> m1_bar_log10;
    std::optional<double> m2_bar_log10;

    // unbounded-law ladder
    std::optional<double> L1, L2_delta, L2_gamma0, L3, L4, L5, L6, L7;
    std::optional<double> m1_global;     // sup bound on |Y|
    std::optional<double> m2_global;     // sup bound on the conditional Z energy
    double eps0 = 0.5;
    std::optional<double> delta, L0;

    std::vector<std::pair<std::string, std::string>> provenance;
};

BoundsRecord a_priori_bounds(const GeneratorConstants& constants, GrowthClass growth_class,
                             double horizon, const AprioriInputs& inputs = {});

struct MonitorReport {
    bool enabled = false;
    double y_bound = 0.0;    // sup bound on |Y|
    double max_abs_y = 0.0;
    bool y_breached = false;
    double bmo_bound = 0.0;  // bound on the conditional Z energy
    double bmo_value = 0.0;
    bool bmo_breached = false;
};

struct PicardDiagnostics {
    std::vector<double> norm_trail;  // successive weighted-norm differences
    int iterations = 0;
    bool converged = false;
    double beta_used = 0.0;
    double tolerance_used = 0.0;
    double z_clamp_used = 0.0;
    bool damping_engaged = false;
    MonitorReport monitors;
    std::optional<BoundsRecord> bounds;
};

/// Discrete solution (Y on nodes, Z on the triangle) with its law flows.
/// Y[k] is stored as the diagonal slice of the final inner family, so the
/// identification Y(t_k) = Ycal(t_k, t_k) holds bit-exactly.
struct SolutionField {
    int steps = 0;
    double horizon = 0.0;
    int dimension = 1;
    NodeField Y;
    TriField Z;
    LawFlow laws;
    PicardDiagnostics diagnostics;
};

class NonConvergenceError : public Error {
public:
    NonConvergenceError(const std::string& message, SolutionField partial)
        : Error(message), partial_(std::make_shared<SolutionField>(std::move(partial))) {}
    const SolutionField& partial() const { return *partial_; }

private:
    std::shared_ptr<SolutionField> partial_;
};

/// Law flows reduced to what the driver catalog consumes, one entry per grid
/// node (mu) and per triangular pair (nu).
struct LawStatsFlow {
    std::vector<double> w2_mu0;   // per node k
    std::vector<double> mean_mu;  // per node k
    std::vector<double> w2_nu0;   // per flat triangular index
};

/// One backward sweep of the parameterized family with frozen flows: for each
/// row i, terminal value psi(t_i), then for k = M-1..i extract Z, condition,
/// and advance with the driver evaluated at the frozen y-flow and law flows
/// (midpoint rule in s; exact integral of the singular weight on the
/// diagonal cell; quadratic classes clamp the z argument at z_clamp).
std::pair<TriField, TriField> solve_inner_family(const Problem& problem,
                                                 const NodeField& y_flow,
                                                 const TriField& z_flow, const LawFlow& laws);

SolutionField picard_solve(const Problem& problem, const PicardConfig& config = {});

/// Grid proxy for the conditional Z-energy norm: the maximum over rows i,
/// conditioning steps k >= i, and states of E[sum_{l>=k} |Z(t_i,t_l)|^2 dt | F_{t_k}].
double bmo_proxy(const SolutionField& solution, const CondExpEngine& engine,
                 const NoiseEnsemble& ensemble);

namespace detail {

LawStatsFlow dirac0_stats(int steps);
LawStatsFlow stats_from_fields(const NodeField& y, const TriField& z,
                               const NoiseEnsemble& ensemble);
LawStatsFlow stats_from_laws(const LawFlow& laws);
LawFlow laws_from_fields(const NodeField& y, const TriField& z, const NoiseEnsemble& ensemble,
                         int dim);

std::pair<TriField, TriField> inner_family_impl(const Problem& problem, const NodeField& y_flow,
                                                const LawStatsFlow& stats, double z_clamp);

double weighted_norm_diff(const NodeField& ya, const NodeField& yb, const TriField& za,
                          const TriField& zb, const NoiseEnsemble& ensemble,
                          const TimeGrid& grid, double beta);

/// z-argument clamp radius for quadratic classes (sqrt(M2 / dt), capped).
double resolve_z_clamp(const Problem& problem, const PicardConfig& config);

/// Picard loop with the law flows frozen at `stats` (only the y-flow
/// iterates); used for the coupled mean-field copies.
struct FrozenSolve {
    NodeField Y;
    TriField Z;
    std::vector<double> norm_trail;
    bool converged = false;
    int iterations = 0;
};
FrozenSolve picard_solve_frozen(const Problem& problem, const LawStatsFlow& stats,
                                const PicardConfig& config);

} // namespace detail

} // namespace bsvie
