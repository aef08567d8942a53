#include "bsvie/time_grid.hpp"

namespace bsvie {

TimeGrid make_grid(double horizon, int steps) {
    if (!(horizon > 0.0)) throw ValidationError("make_grid: horizon must be positive");
    if (steps < 1) throw ValidationError("make_grid: step count must be positive");
    TimeGrid g;
    g.horizon = horizon;
    g.steps = steps;
    g.dt = horizon / steps;
    g.nodes.resize(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k)
        g.nodes[static_cast<std::size_t>(k)] = horizon * static_cast<double>(k) / steps;
    return g;
}

} // namespace bsvie
