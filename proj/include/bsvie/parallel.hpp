#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace bsvie {

/// Process-wide worker cap for parallel maps (set from the CLI --threads flag).
int worker_count();
void set_worker_count(int n);

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Tasks must
/// write to disjoint slots; the blocking scheme is fixed so results do not
/// depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace bsvie
