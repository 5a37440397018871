#pragma once

#include <cstddef>
#include <functional>

namespace schedopt {

/// Worker cap: SCHED_OPT_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) over static contiguous chunks. Callers write results into
/// per-index slots and reduce afterwards in index order, so output never depends on the
/// thread count. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace schedopt
