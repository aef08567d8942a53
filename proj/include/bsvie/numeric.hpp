#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace bsvie {

/// Sum that does not depend on the input order: addends are sorted by value
/// before accumulation, so any permutation of the input yields bit-identical
/// results. Used for cross-scenario and cross-particle reductions.
inline double stable_sum(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc;
}

inline double stable_sum(std::span<const double> xs) {
    return stable_sum(std::vector<double>(xs.begin(), xs.end()));
}

inline double stable_mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    return stable_sum(xs) / static_cast<double>(xs.size());
}

/// Order-independent mean of x_i^2.
inline double stable_mean_sq(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    std::vector<double> sq(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) sq[i] = xs[i] * xs[i];
    return stable_sum(std::move(sq)) / static_cast<double>(xs.size());
}

inline bool all_finite(std::span<const double> xs) {
    for (double x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace bsvie
