#pragma once

#include <cstddef>
#include <functional>

namespace reefclust {

/// Worker cap: REEFCLUST_THREADS if set, otherwise hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Callers write results to index-owned slots so the
/// outcome never depends on the number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace reefclust
