#pragma once

#include <cstddef>
#include <vector>

#include "bsvie/errors.hpp"

namespace bsvie {

/// Uniform partition 0 = t_0 < t_1 < ... < t_M = T.
struct TimeGrid {
    double horizon = 0.0;            // T
    int steps = 0;                   // M
    double dt = 0.0;                 // T / M
    std::vector<double> nodes;       // size M + 1

    int node_count() const { return steps + 1; }
};

TimeGrid make_grid(double horizon, int steps);

/// The index set {(i, k) : 0 <= i <= k <= M} with row-major enumeration
/// (i outer, k inner). Pairs are flattened so row i occupies the contiguous
/// range [row_begin(i), row_begin(i) + M - i].
class TriangularIndex {
public:
    explicit TriangularIndex(int steps) : steps_(steps) {}

    int steps() const { return steps_; }

    std::size_t size() const {
        const std::size_t m = static_cast<std::size_t>(steps_);
        return (m + 1) * (m + 2) / 2;
    }

    std::size_t row_begin(int i) const {
        const std::size_t m = static_cast<std::size_t>(steps_);
        const std::size_t ii = static_cast<std::size_t>(i);
        return ii * (m + 1) - ii * (ii - 1) / 2;
    }

    std::size_t flat(int i, int k) const {
        return row_begin(i) + static_cast<std::size_t>(k - i);
    }

    /// Enumerates all pairs in the documented order.
    std::vector<std::pair<int, int>> pairs() const {
        std::vector<std::pair<int, int>> out;
        out.reserve(size());
        for (int i = 0; i <= steps_; ++i)
            for (int k = i; k <= steps_; ++k) out.emplace_back(i, k);
        return out;
    }

private:
    int steps_;
};

} // namespace bsvie
