#pragma once

#include <cstddef>
#include <functional>

namespace s2sk {

// Worker count: S2SK_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Runs body(i) for i in [0, n) on up to worker_count() threads. Each index
// runs exactly once; callers own any cross-index ordering. The first
// exception thrown by a body is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace s2sk
