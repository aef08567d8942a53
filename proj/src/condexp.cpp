#include "bsvie/condexp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "bsvie/errors.hpp"

namespace bsvie {

namespace detail {

std::vector<std::vector<int>> monomial_exponents(int vars, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> current(static_cast<std::size_t>(vars), 0);
    // Lexicographic recursion over exponent tuples with total degree <= degree.
    std::function<void(int, int)> rec = [&](int var, int remaining) {
        if (var == vars) {
            out.push_back(current);
            return;
        }
        for (int e = 0; e <= remaining; ++e) {
            current[static_cast<std::size_t>(var)] = e;
            rec(var + 1, remaining - e);
        }
        current[static_cast<std::size_t>(var)] = 0;
    };
    rec(0, degree);
    return out;
}

} // namespace detail

struct RegressionFit::Impl {
    int scenarios = 0;
    int nfeat = 0;
    Eigen::MatrixXd rows;              // scenarios x nfeat feature matrix
    Eigen::LDLT<Eigen::MatrixXd> ldlt; // factorized X'X + ridge I
    std::vector<int> order;            // canonical scenario order
    std::vector<std::size_t> group_begin; // runs of equal feature rows in `order`
};

RegressionFit::RegressionFit(const NoiseEnsemble& ensemble, int k, const FeatureSpec& features,
                             const RegressionSettings& settings) {
    if (ensemble.mode() != NoiseMode::paths)
        throw ValidationError("regression fits require a paths ensemble");
    if (settings.degree < 0) throw ValidationError("regression degree must be >= 0");
    if (settings.ridge < 0.0) throw ValidationError("regression ridge must be >= 0");

    impl_ = std::make_unique<Impl>();
    Impl& im = *impl_;
    im.scenarios = ensemble.scenario_count();

    const auto exponents = detail::monomial_exponents(features.coord_count, settings.degree);
    const int nmono = static_cast<int>(exponents.size());
    const int nextra = static_cast<int>(features.extra_columns.size());
    im.nfeat = nmono + nextra;

    for (const auto& col : features.extra_columns)
        if (static_cast<int>(col.size()) != im.scenarios)
            throw ValidationError("extra feature column has wrong length");

    im.rows.resize(im.scenarios, im.nfeat);
    std::vector<double> state(static_cast<std::size_t>(features.coord_count));
    for (int p = 0; p < im.scenarios; ++p) {
        for (int c = 0; c < features.coord_count; ++c)
            state[static_cast<std::size_t>(c)] =
                ensemble.brownian(k, p, features.coord_offset + c);
        for (int f = 0; f < nmono; ++f) {
            double v = 1.0;
            const auto& e = exponents[static_cast<std::size_t>(f)];
            for (int c = 0; c < features.coord_count; ++c)
                for (int rep = 0; rep < e[static_cast<std::size_t>(c)]; ++rep)
                    v *= state[static_cast<std::size_t>(c)];
            im.rows(p, f) = v;
        }
        for (int x = 0; x < nextra; ++x)
            im.rows(p, nmono + x) = features.extra_columns[static_cast<std::size_t>(x)][
                static_cast<std::size_t>(p)];
    }
    if (!im.rows.allFinite())
        throw NumericalError("regression features contain non-finite values");

    // Canonical order: lexicographic by feature row.
    im.order.resize(static_cast<std::size_t>(im.scenarios));
    std::iota(im.order.begin(), im.order.end(), 0);
    const auto row_less = [&](int a, int b) {
        for (int f = 0; f < im.nfeat; ++f) {
            if (im.rows(a, f) < im.rows(b, f)) return true;
            if (im.rows(a, f) > im.rows(b, f)) return false;
        }
        return false;
    };
    std::sort(im.order.begin(), im.order.end(), row_less);

    const auto row_equal = [&](int a, int b) {
        for (int f = 0; f < im.nfeat; ++f)
            if (im.rows(a, f) != im.rows(b, f)) return false;
        return true;
    };
    im.group_begin.push_back(0);
    for (std::size_t s = 1; s < im.order.size(); ++s)
        if (!row_equal(im.order[s - 1], im.order[s])) im.group_begin.push_back(s);
    im.group_begin.push_back(im.order.size());

    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(im.nfeat, im.nfeat);
    for (std::size_t g = 0; g + 1 < im.group_begin.size(); ++g) {
        const int rep = im.order[im.group_begin[g]];
        const double count =
            static_cast<double>(im.group_begin[g + 1] - im.group_begin[g]);
        xtx.selfadjointView<Eigen::Lower>().rankUpdate(im.rows.row(rep).transpose(), count);
    }
    Eigen::MatrixXd full = xtx.selfadjointView<Eigen::Lower>();
    full.diagonal().array() += settings.ridge;
    im.ldlt.compute(full);
    if (im.ldlt.info() != Eigen::Success)
        throw NumericalError("regression design matrix could not be factorized (step " +
                             std::to_string(k) + ")");
}

RegressionFit::~RegressionFit() = default;
RegressionFit::RegressionFit(RegressionFit&&) noexcept = default;
RegressionFit& RegressionFit::operator=(RegressionFit&&) noexcept = default;

int RegressionFit::feature_count() const { return impl_->nfeat; }

std::vector<double> RegressionFit::apply(std::span<const double> target) const {
    const Impl& im = *impl_;
    if (static_cast<int>(target.size()) != im.scenarios)
        throw ValidationError("regression target has wrong length");

    Eigen::VectorXd xty = Eigen::VectorXd::Zero(im.nfeat);
    std::vector<double> bucket;
    for (std::size_t g = 0; g + 1 < im.group_begin.size(); ++g) {
        const std::size_t lo = im.group_begin[g];
        const std::size_t hi = im.group_begin[g + 1];
        double tsum;
        if (hi - lo == 1) {
            tsum = target[static_cast<std::size_t>(im.order[lo])];
        } else {
            bucket.clear();
            for (std::size_t s = lo; s < hi; ++s)
                bucket.push_back(target[static_cast<std::size_t>(im.order[s])]);
            std::sort(bucket.begin(), bucket.end());
            tsum = 0.0;
            for (double t : bucket) tsum += t;
        }
        xty.noalias() += im.rows.row(im.order[lo]).transpose() * tsum;
    }

    const Eigen::VectorXd beta = im.ldlt.solve(xty);
    if (!beta.allFinite())
        throw NumericalError("regression solve produced non-finite coefficients");
    Eigen::VectorXd fitted = im.rows * beta;
    return std::vector<double>(fitted.data(), fitted.data() + fitted.size());
}

namespace {

std::vector<double> lattice_onestep(const NoiseEnsemble& ens, int k,
                                    std::span<const double> target) {
    // E[. | node j at step k] over the two equiprobable children.
    std::vector<double> out(static_cast<std::size_t>(k) + 1);
    for (int j = 0; j <= k; ++j)
        out[static_cast<std::size_t>(j)] =
            0.5 * (target[static_cast<std::size_t>(j)] + target[static_cast<std::size_t>(j) + 1]);
    (void)ens;
    return out;
}

void check_engine(const CondExpEngine& engine, const NoiseEnsemble& ensemble) {
    if (engine.backend == CondExpBackend::lattice_exact &&
        ensemble.mode() != NoiseMode::lattice)
        throw ValidationError("lattice-exact engine requires a lattice ensemble");
    if (engine.backend == CondExpBackend::regression && ensemble.mode() != NoiseMode::paths)
        throw ValidationError("regression engine requires a paths ensemble");
}

} // namespace

std::vector<double> condexp(const CondExpEngine& engine, const NoiseEnsemble& ensemble, int k,
                            std::span<const double> target, int target_step) {
    check_engine(engine, ensemble);
    if (k >= ensemble.steps()) throw ValidationError("condexp: k must satisfy k < M");
    if (target_step < 0) target_step = k + 1;

    if (engine.backend == CondExpBackend::lattice_exact) {
        if (static_cast<int>(target.size()) != ensemble.states_at(target_step))
            throw ValidationError("condexp: lattice target has wrong length");
        std::vector<double> cur(target.begin(), target.end());
        for (int m = target_step; m > k; --m) cur = lattice_onestep(ensemble, m - 1, cur);
        return cur;
    }

    RegressionFit fit(ensemble, k,
                      FeatureSpec{0, ensemble.dimension(), {}}, engine.regression);
    return fit.apply(target);
}

std::vector<double> extract_z(const CondExpEngine& engine, const NoiseEnsemble& ensemble, int k,
                              std::span<const double> next_value,
                              std::span<const double> center) {
    check_engine(engine, ensemble);
    if (k >= ensemble.steps()) throw ValidationError("extract_z: k must satisfy k < M");

    if (engine.backend == CondExpBackend::lattice_exact) {
        if (static_cast<int>(next_value.size()) != k + 2)
            throw ValidationError("extract_z: lattice next_value has wrong length");
        const double root_dt = std::sqrt(ensemble.dt());
        std::vector<double> out(static_cast<std::size_t>(k) + 1);
        for (int j = 0; j <= k; ++j)
            out[static_cast<std::size_t>(j)] =
                (next_value[static_cast<std::size_t>(j) + 1] -
                 next_value[static_cast<std::size_t>(j)]) /
                (2.0 * root_dt);
        return out;
    }

    const int P = ensemble.scenario_count();
    const int d = ensemble.dimension();
    if (static_cast<int>(next_value.size()) != P)
        throw ValidationError("extract_z: next_value has wrong length");

    RegressionFit fit(ensemble, k, FeatureSpec{0, d, {}}, engine.regression);
    std::vector<double> out(static_cast<std::size_t>(P) * d);
    std::vector<double> tgt(static_cast<std::size_t>(P));
    const double inv_dt = 1.0 / ensemble.dt();
    for (int c = 0; c < d; ++c) {
        for (int p = 0; p < P; ++p) {
            const double centered = center.empty()
                                        ? next_value[static_cast<std::size_t>(p)]
                                        : next_value[static_cast<std::size_t>(p)] -
                                              center[static_cast<std::size_t>(p)];
            tgt[static_cast<std::size_t>(p)] = centered * ensemble.increment(k, p, c) * inv_dt;
        }
        const auto fitted = fit.apply(tgt);
        for (int p = 0; p < P; ++p)
            out[static_cast<std::size_t>(p) * d + c] = fitted[static_cast<std::size_t>(p)];
    }
    return out;
}

} // namespace bsvie
