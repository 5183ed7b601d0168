#pragma once

#include <functional>

namespace sgs {

// 0 -> hardware concurrency, otherwise the requested count (minimum 1).
int resolve_threads(int requested);

// Runs fn(worker, begin, end) over a static contiguous partition of [0, n).
// The partition depends only on n and the resolved thread count, so any
// per-worker accumulation merged in worker order is reproducible.
void parallel_blocks(int n, int threads, const std::function<void(int, int, int)>& fn);

}  // namespace sgs
