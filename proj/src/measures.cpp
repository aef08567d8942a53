#include "bsvie/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bsvie/numeric.hpp"

namespace bsvie {

namespace {

constexpr double kWeightTol = 1e-12;
constexpr int kAssignmentCap = 512;

void check_p(double p) {
    if (!(p >= 1.0)) throw ValidationError("wasserstein: order p must satisfy p >= 1");
}

} // namespace

EmpiricalMeasure::EmpiricalMeasure(int dim, std::vector<double> points,
                                   std::vector<double> weights)
    : dim_(dim), points_(std::move(points)), weights_(std::move(weights)) {
    if (dim_ < 1) throw ValidationError("EmpiricalMeasure: dimension must be positive");
    if (weights_.empty()) throw ValidationError("EmpiricalMeasure: empty support");
    if (points_.size() != weights_.size() * static_cast<std::size_t>(dim_))
        throw ValidationError("EmpiricalMeasure: point/weight size mismatch");
    double total = 0.0;
    for (double w : weights_) {
        if (w < 0.0) throw ValidationError("EmpiricalMeasure: negative weight");
        total += w;
    }
    if (std::abs(total - 1.0) > kWeightTol)
        throw ValidationError("EmpiricalMeasure: weights must sum to 1");
}

EmpiricalMeasure EmpiricalMeasure::uniform(int dim, std::vector<double> points) {
    if (dim < 1 || points.empty() || points.size() % static_cast<std::size_t>(dim) != 0)
        throw ValidationError("EmpiricalMeasure::uniform: bad support");
    const std::size_t n = points.size() / static_cast<std::size_t>(dim);
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    return EmpiricalMeasure(dim, std::move(points), std::move(w));
}

EmpiricalMeasure EmpiricalMeasure::dirac(std::vector<double> point) {
    const int dim = static_cast<int>(point.size());
    return EmpiricalMeasure(dim, std::move(point), {1.0});
}

EmpiricalMeasure EmpiricalMeasure::dirac0(int dim) {
    return dirac(std::vector<double>(static_cast<std::size_t>(dim), 0.0));
}

bool EmpiricalMeasure::uniform_weights() const {
    const double u = 1.0 / static_cast<double>(size());
    for (double w : weights_)
        if (std::abs(w - u) > kWeightTol) return false;
    return true;
}

namespace {

double wasserstein_1d(double p, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    struct Atom {
        double x, w;
    };
    auto sorted_atoms = [](const EmpiricalMeasure& m) {
        std::vector<Atom> a(static_cast<std::size_t>(m.size()));
        for (int i = 0; i < m.size(); ++i) a[static_cast<std::size_t>(i)] = {m.point(i)[0], m.weight(i)};
        std::sort(a.begin(), a.end(), [](const Atom& l, const Atom& r) { return l.x < r.x; });
        return a;
    };
    const auto a = sorted_atoms(mu);
    const auto b = sorted_atoms(nu);

    // Walk both cumulative weight profiles, paying |x - y|^p per mass segment.
    std::size_t i = 0, j = 0;
    double ra = a[0].w, rb = b[0].w; // remaining mass in the current atoms
    double cost = 0.0;
    while (i < a.size() && j < b.size()) {
        const double m = std::min(ra, rb);
        if (m > 0.0) cost += m * std::pow(std::abs(a[i].x - b[j].x), p);
        ra -= m;
        rb -= m;
        if (ra <= 0.0) {
            ++i;
            if (i < a.size()) ra = a[i].w;
        }
        if (rb <= 0.0) {
            ++j;
            if (j < b.size()) rb = b[j].w;
        }
    }
    return std::pow(cost, 1.0 / p);
}

double sq_dist(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) {
        const double d = x[c] - y[c];
        s += d * d;
    }
    return s;
}

} // namespace

namespace detail {

// Shortest-augmenting-path assignment (Jonker-Volgenant style) on an n x n
// cost matrix stored row-major. Returns the minimal total cost.
double assignment_cost(const std::vector<double>& cost, int n) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> match(static_cast<std::size_t>(n) + 1, 0); // column -> row (1-based)
    std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);

    for (int row = 1; row <= n; ++row) {
        match[0] = row;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = match[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = -1;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] -
                                   u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    double total = 0.0;
    for (int j = 1; j <= n; ++j)
        total += cost[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1) * n + (j - 1)];
    return total;
}

} // namespace detail

double wasserstein(double p, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    check_p(p);
    if (mu.dim() != nu.dim())
        throw ValidationError("wasserstein: dimension mismatch");
    if (mu.dim() == 1) return wasserstein_1d(p, mu, nu);

    if (mu.size() != nu.size() || !mu.uniform_weights() || !nu.uniform_weights())
        throw UnsupportedError(
            "wasserstein: dimension > 1 requires equally sized, uniformly weighted supports");
    const int n = mu.size();
    if (n > kAssignmentCap)
        throw ResourceLimitError("wasserstein: assignment support exceeds cap of 512");

    std::vector<double> cost(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            cost[static_cast<std::size_t>(i) * n + j] =
                std::pow(sq_dist(mu.point(i), nu.point(j)), p / 2.0);
    const double total = detail::assignment_cost(cost, n);
    return std::pow(total / n, 1.0 / p);
}

double distance_to_dirac0(double p, const EmpiricalMeasure& mu) {
    check_p(p);
    std::vector<double> terms(static_cast<std::size_t>(mu.size()));
    for (int i = 0; i < mu.size(); ++i) {
        const auto x = mu.point(i);
        double norm_sq = 0.0;
        for (double c : x) norm_sq += c * c;
        terms[static_cast<std::size_t>(i)] = mu.weight(i) * std::pow(norm_sq, p / 2.0);
    }
    return std::pow(stable_sum(std::move(terms)), 1.0 / p);
}

bool coupling_bound_check(double p, std::span<const double> xs, std::span<const double> ys) {
    check_p(p);
    if (xs.size() != ys.size())
        throw ValidationError("coupling_bound_check: sample length mismatch");
    const auto mu = EmpiricalMeasure::uniform(1, std::vector<double>(xs.begin(), xs.end()));
    const auto nu = EmpiricalMeasure::uniform(1, std::vector<double>(ys.begin(), ys.end()));
    const double w = wasserstein(p, mu, nu);
    std::vector<double> terms(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        terms[i] = std::pow(std::abs(xs[i] - ys[i]), p);
    const double coupling = std::pow(stable_mean(terms), 1.0 / p);
    return w <= coupling + 1e-10;
}

} // namespace bsvie
