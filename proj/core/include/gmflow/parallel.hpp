#pragma once

#include <cstddef>
#include <functional>

namespace gmflow {

/// Worker count for parallel loops. Defaults to GMFLOW_THREADS when set,
/// otherwise the hardware concurrency.
int thread_count();
void set_thread_count(int threads);

/// Runs fn(i) for i in [0, n) on a static partition of the worker pool. The
/// exception thrown by the lowest failing index is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gmflow
