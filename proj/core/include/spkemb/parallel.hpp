#pragma once

#include <cstddef>
#include <functional>

namespace spkemb {

/// Hardware concurrency, at least 1.
std::size_t default_workers();

/// Calls fn(i) for i in [0, n) on up to `workers` threads. Each index runs
/// exactly once; results must be written to per-index slots. The first
/// exception thrown by any call is rethrown after all threads join.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace spkemb
