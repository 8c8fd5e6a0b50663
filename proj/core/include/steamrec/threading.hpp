#pragma once

#include <functional>

namespace steamrec {

// Worker count: STEAMREC_THREADS if set (clamped to >= 1), otherwise
// std::thread::hardware_concurrency().
int thread_budget();

// Applies fn to every index in [begin, end) using up to `threads` workers on
// contiguous ranges. fn must only write per-index state; under that contract
// results do not depend on the worker count. The first exception thrown by
// fn is rethrown on the calling thread.
void parallel_for(int begin, int end, int threads, const std::function<void(int)>& fn);

}  // namespace steamrec
