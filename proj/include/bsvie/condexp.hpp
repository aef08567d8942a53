#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "bsvie/noise.hpp"
#include "bsvie/time_grid.hpp"

namespace bsvie {

enum class CondExpBackend { lattice_exact, regression };

struct RegressionSettings {
    int degree = 3;      // polynomial degree in the conditioning state
    double ridge = 1e-8; // always-on Tikhonov weight
};

/// Estimator of E[. | F_{t_k}] evaluated state-wise.
struct CondExpEngine {
    CondExpBackend backend = CondExpBackend::regression;
    RegressionSettings regression;
};

/// Per-state values indexed by a grid node or a triangular pair. values[k]
/// has one entry per state at step k (lattice: k + 1 nodes, paths: P
/// scenarios), times the payload dimension for vector-valued fields.
struct NodeField {
    std::vector<std::vector<double>> values; // index: step k
};

struct TriField {
    int steps = 0;
    int dim = 1;
    std::vector<std::vector<double>> values; // index: flat triangular (i, k)

    std::vector<double>& at(const TriangularIndex& tri, int i, int k) {
        return values[tri.flat(i, k)];
    }
    const std::vector<double>& at(const TriangularIndex& tri, int i, int k) const {
        return values[tri.flat(i, k)];
    }
};

/// Which coordinates of the ensemble form the regression state, plus any
/// extra per-scenario feature columns (used by the particle solver for the
/// symmetric ensemble moments).
struct FeatureSpec {
    int coord_offset = 0;
    int coord_count = 1;
    std::vector<std::span<const double>> extra_columns;
};

/// One least-squares fit at a fixed step: the normal matrix is accumulated
/// in a canonical scenario order (lexicographic by feature row; within equal
/// rows, targets are summed by sorted value) so fitted values do not depend
/// on scenario labelling, then factorized once and reused for many targets.
class RegressionFit {
public:
    RegressionFit(const NoiseEnsemble& ensemble, int k, const FeatureSpec& features,
                  const RegressionSettings& settings);
    ~RegressionFit();
    RegressionFit(RegressionFit&&) noexcept;
    RegressionFit& operator=(RegressionFit&&) noexcept;

    /// Projects the target and evaluates the fit at every scenario.
    std::vector<double> apply(std::span<const double> target) const;

    int feature_count() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// E[target | F_{t_k}] state-wise. The target lives at `target_step`
/// (defaults to k + 1). On the lattice the expectation is the exact repeated
/// one-step binomial average; under regression the target is projected onto
/// polynomial features of the Brownian state at t_k.
std::vector<double> condexp(const CondExpEngine& engine, const NoiseEnsemble& ensemble, int k,
                            std::span<const double> target, int target_step = -1);

/// Z_k ~ (1/dt) E[next_value * dW_k | F_{t_k}] per coordinate, returned
/// state-major (state * d + coord). The lattice uses the exact two-point
/// formula; regression subtracts `center` (typically the fitted conditional
/// mean of next_value) as a control variate before projecting.
std::vector<double> extract_z(const CondExpEngine& engine, const NoiseEnsemble& ensemble, int k,
                              std::span<const double> next_value,
                              std::span<const double> center = {});

namespace detail {
/// Exponent tuples of all monomials in `vars` variables up to total degree.
std::vector<std::vector<int>> monomial_exponents(int vars, int degree);
} // namespace detail

} // namespace bsvie
