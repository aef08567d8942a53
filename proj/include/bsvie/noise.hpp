#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bsvie/time_grid.hpp"

namespace bsvie {

enum class NoiseMode { paths, lattice };

inline constexpr int kDefaultLatticeCap = 64;

/// Sampled Brownian drivers. Two backends share one interface:
///  - paths: P scenarios of d-dimensional increments from a counter-based
///    generator keyed by (seed, scenario, step, coordinate), so scenarios are
///    prefix-stable when P grows and sampling order never matters;
///  - lattice: a recombining binomial tree (d = 1) with node values
///    (2j - k) * sqrt(dt) at step k and exact binomial weights, supporting
///    exact one-step conditional expectation.
class NoiseEnsemble {
public:
    static NoiseEnsemble sample_paths(const TimeGrid& grid, int dimension, int scenarios,
                                      std::uint64_t seed);
    static NoiseEnsemble build_lattice(const TimeGrid& grid, int cap = kDefaultLatticeCap);

    NoiseMode mode() const { return mode_; }
    int dimension() const { return dimension_; }
    int steps() const { return steps_; }
    double dt() const { return dt_; }
    std::uint64_t seed() const { return seed_; }
    const std::string& layout() const { return layout_; }

    /// Number of distinct states carried at step k (paths: P; lattice: k + 1).
    int states_at(int k) const { return mode_ == NoiseMode::paths ? scenarios_ : k + 1; }
    int scenario_count() const { return scenarios_; }

    /// W(t_k) for the given state, coordinate-wise.
    double brownian(int k, int state, int coord) const;

    /// Increment W(t_{k+1}) - W(t_k); paths mode only.
    double increment(int k, int state, int coord) const;

    /// Probability weight of a state at step k (paths: 1/P; lattice: binomial).
    double state_weight(int k, int state) const;
    std::span<const double> weights_at(int k) const;

    /// Rebuilds the paths ensemble with scenarios re-labelled by perm
    /// (new scenario p carries old scenario perm[p]); test support.
    NoiseEnsemble permuted_scenarios(const std::vector<int>& perm) const;

private:
    NoiseEnsemble() = default;

    NoiseMode mode_ = NoiseMode::paths;
    int dimension_ = 1;
    int steps_ = 0;
    int scenarios_ = 0;
    double dt_ = 0.0;
    std::uint64_t seed_ = 0;
    std::string layout_;

    // paths: increments_[p * steps * d + k * d + j], cumulative_[p * (steps+1) * d + k * d + j]
    std::vector<double> increments_;
    std::vector<double> cumulative_;

    // lattice: weights per step, lattice_weights_[k][j], j = 0..k
    std::vector<std::vector<double>> lattice_weights_;
};

namespace detail {
/// Counter-based uniform bits: a keyed splitmix-style finalizer chain.
std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c);
/// Standard normal draw for (seed, scenario, step, coordinate).
double normal_draw(std::uint64_t seed, std::uint64_t scenario, std::uint64_t step,
                   std::uint64_t coord);
} // namespace detail

} // namespace bsvie
