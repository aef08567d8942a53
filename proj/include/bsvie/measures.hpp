#pragma once

#include <span>
#include <vector>

#include "bsvie/errors.hpp"
#include "bsvie/time_grid.hpp"

namespace bsvie {

/// Finitely supported probability measure on R^d. Points are stored
/// row-major (point i occupies [i*dim, (i+1)*dim)); weights are nonnegative
/// and sum to 1 within 1e-12 (uniform by default).
class EmpiricalMeasure {
public:
    EmpiricalMeasure(int dim, std::vector<double> points, std::vector<double> weights);

    static EmpiricalMeasure uniform(int dim, std::vector<double> points);
    static EmpiricalMeasure dirac(std::vector<double> point);
    static EmpiricalMeasure dirac0(int dim);

    int dim() const { return dim_; }
    int size() const { return static_cast<int>(weights_.size()); }
    std::span<const double> point(int i) const {
        return {points_.data() + static_cast<std::size_t>(i) * dim_,
                static_cast<std::size_t>(dim_)};
    }
    double weight(int i) const { return weights_[static_cast<std::size_t>(i)]; }
    std::span<const double> points() const { return points_; }
    std::span<const double> weights() const { return weights_; }

    bool uniform_weights() const;

private:
    int dim_;
    std::vector<double> points_;
    std::vector<double> weights_;
};

/// Exact p-Wasserstein distance. Dimension 1: quantile matching on merged
/// cumulative-weight breakpoints (any weights). Dimension > 1: optimal
/// assignment over equally sized uniformly weighted supports (Hungarian,
/// capped at n = 512).
double wasserstein(double p, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

/// (sum_i w_i |x_i|^p)^(1/p), the distance to the Dirac mass at the origin.
double distance_to_dirac0(double p, const EmpiricalMeasure& mu);

/// Self-test of the coupling inequality
/// W_p(emp(xs), emp(ys)) <= (mean |xs_i - ys_i|^p)^(1/p) + 1e-10.
bool coupling_bound_check(double p, std::span<const double> xs, std::span<const double> ys);

/// Discrete law flows: one 1-D measure per grid node for Y, one d-dimensional
/// measure per triangular pair (i, k) for Z.
struct LawFlow {
    std::vector<EmpiricalMeasure> y_laws;  // index k = 0..M
    std::vector<EmpiricalMeasure> z_laws;  // flat triangular index
};

namespace detail {
/// Minimum-cost perfect assignment on a square cost matrix (O(n^3)).
double assignment_cost(const std::vector<double>& cost, int n);
} // namespace detail

} // namespace bsvie
