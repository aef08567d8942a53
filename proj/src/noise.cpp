#include "bsvie/noise.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "bsvie/errors.hpp"

namespace bsvie {

namespace detail {

namespace {
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}
} // namespace

std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                           std::uint64_t c) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ a);
    h = mix64(h ^ b);
    h = mix64(h ^ c);
    return h;
}

double normal_draw(std::uint64_t seed, std::uint64_t scenario, std::uint64_t step,
                   std::uint64_t coord) {
    // Two uniforms per draw, Box-Muller. The uniforms live in (0, 1].
    const std::uint64_t h1 = counter_hash(seed, scenario, step, 2 * coord);
    const std::uint64_t h2 = counter_hash(seed, scenario, step, 2 * coord + 1);
    const double u1 = static_cast<double>((h1 >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace detail

NoiseEnsemble NoiseEnsemble::sample_paths(const TimeGrid& grid, int dimension, int scenarios,
                                          std::uint64_t seed) {
    if (dimension < 1) throw ValidationError("sample_paths: dimension must be positive");
    if (scenarios < 1) throw ValidationError("sample_paths: scenario count must be positive");

    NoiseEnsemble e;
    e.mode_ = NoiseMode::paths;
    e.dimension_ = dimension;
    e.steps_ = grid.steps;
    e.scenarios_ = scenarios;
    e.dt_ = grid.dt;
    e.seed_ = seed;
    {
        std::ostringstream os;
        os << "ctr-v1/(seed,scenario,step,coord)/box-muller d=" << dimension
           << " M=" << grid.steps;
        e.layout_ = os.str();
    }

    const double root_dt = std::sqrt(grid.dt);
    const std::size_t d = static_cast<std::size_t>(dimension);
    const std::size_t M = static_cast<std::size_t>(grid.steps);
    e.increments_.resize(static_cast<std::size_t>(scenarios) * M * d);
    e.cumulative_.resize(static_cast<std::size_t>(scenarios) * (M + 1) * d);
    for (std::size_t p = 0; p < static_cast<std::size_t>(scenarios); ++p) {
        for (std::size_t j = 0; j < d; ++j) e.cumulative_[p * (M + 1) * d + j] = 0.0;
        for (std::size_t k = 0; k < M; ++k) {
            for (std::size_t j = 0; j < d; ++j) {
                const double z = detail::normal_draw(seed, p, k, j);
                const double dw = root_dt * z;
                e.increments_[p * M * d + k * d + j] = dw;
                e.cumulative_[p * (M + 1) * d + (k + 1) * d + j] =
                    e.cumulative_[p * (M + 1) * d + k * d + j] + dw;
            }
        }
    }
    return e;
}

NoiseEnsemble NoiseEnsemble::build_lattice(const TimeGrid& grid, int cap) {
    if (grid.steps > cap) {
        std::ostringstream os;
        os << "build_lattice: M=" << grid.steps << " exceeds lattice cap " << cap;
        throw ResourceLimitError(os.str());
    }
    NoiseEnsemble e;
    e.mode_ = NoiseMode::lattice;
    e.dimension_ = 1;
    e.steps_ = grid.steps;
    e.scenarios_ = grid.steps + 1; // terminal node count
    e.dt_ = grid.dt;
    e.seed_ = 0;
    e.layout_ = "lattice-v1/recombining-binomial";

    e.lattice_weights_.resize(static_cast<std::size_t>(grid.steps) + 1);
    e.lattice_weights_[0] = {1.0};
    for (int k = 0; k < grid.steps; ++k) {
        const auto& prev = e.lattice_weights_[static_cast<std::size_t>(k)];
        std::vector<double> next(static_cast<std::size_t>(k) + 2, 0.0);
        for (int j = 0; j <= k; ++j) {
            next[static_cast<std::size_t>(j)] += 0.5 * prev[static_cast<std::size_t>(j)];
            next[static_cast<std::size_t>(j) + 1] += 0.5 * prev[static_cast<std::size_t>(j)];
        }
        e.lattice_weights_[static_cast<std::size_t>(k) + 1] = std::move(next);
    }
    return e;
}

double NoiseEnsemble::brownian(int k, int state, int coord) const {
    if (mode_ == NoiseMode::lattice) {
        return (2.0 * state - k) * std::sqrt(dt_);
    }
    const std::size_t M = static_cast<std::size_t>(steps_);
    const std::size_t d = static_cast<std::size_t>(dimension_);
    return cumulative_[static_cast<std::size_t>(state) * (M + 1) * d +
                       static_cast<std::size_t>(k) * d + static_cast<std::size_t>(coord)];
}

double NoiseEnsemble::increment(int k, int state, int coord) const {
    if (mode_ != NoiseMode::paths)
        throw UnsupportedError("increment(): only defined for the paths backend");
    const std::size_t M = static_cast<std::size_t>(steps_);
    const std::size_t d = static_cast<std::size_t>(dimension_);
    return increments_[static_cast<std::size_t>(state) * M * d +
                       static_cast<std::size_t>(k) * d + static_cast<std::size_t>(coord)];
}

double NoiseEnsemble::state_weight(int k, int state) const {
    if (mode_ == NoiseMode::lattice)
        return lattice_weights_[static_cast<std::size_t>(k)][static_cast<std::size_t>(state)];
    (void)k;
    (void)state;
    return 1.0 / static_cast<double>(scenarios_);
}

std::span<const double> NoiseEnsemble::weights_at(int k) const {
    if (mode_ != NoiseMode::lattice)
        throw UnsupportedError("weights_at(): only defined for the lattice backend");
    const auto& w = lattice_weights_[static_cast<std::size_t>(k)];
    return {w.data(), w.size()};
}

NoiseEnsemble NoiseEnsemble::permuted_scenarios(const std::vector<int>& perm) const {
    if (mode_ != NoiseMode::paths)
        throw UnsupportedError("permuted_scenarios(): only defined for the paths backend");
    if (static_cast<int>(perm.size()) != scenarios_)
        throw ValidationError("permuted_scenarios: permutation size mismatch");
    NoiseEnsemble e = *this;
    const std::size_t M = static_cast<std::size_t>(steps_);
    const std::size_t d = static_cast<std::size_t>(dimension_);
    for (std::size_t p = 0; p < perm.size(); ++p) {
        const std::size_t q = static_cast<std::size_t>(perm[p]);
        for (std::size_t x = 0; x < M * d; ++x)
            e.increments_[p * M * d + x] = increments_[q * M * d + x];
        for (std::size_t x = 0; x < (M + 1) * d; ++x)
            e.cumulative_[p * (M + 1) * d + x] = cumulative_[q * (M + 1) * d + x];
    }
    return e;
}

} // namespace bsvie
