#pragma once

#include <functional>

namespace stylecl {

// Worker cap for embarrassingly parallel loops (generation, evaluation).
// Resolved from STYLECL_THREADS, defaulting to the hardware concurrency.
int worker_threads();
void set_worker_cap(int cap);

// Runs fn(0..n-1); results must go to per-index slots so the outcome does
// not depend on the thread count.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace stylecl
