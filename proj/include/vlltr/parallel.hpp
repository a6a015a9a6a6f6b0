#pragma once

#include <cstddef>
#include <functional>

namespace vlltr {

// Worker cap: VLLTR_THREADS if set to a positive integer, else hardware
// concurrency (at least 1).
std::size_t thread_budget();

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index runs
// exactly once; callers write results into index-addressed slots so output
// order never depends on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace vlltr
