#pragma once

#include <functional>

namespace latentjm {

// Process-wide cap on worker threads for all parallel sections.
// 1 gives a fully serial run. Results are always written into
// preallocated per-index slots, so the outcome is identical for
// any thread count.
void set_max_threads(int n);
int max_threads();

// Runs body(i) for i in [0, n) over contiguous index chunks.
void parallel_for(int n, const std::function<void(int)>& body);

}  // namespace latentjm
