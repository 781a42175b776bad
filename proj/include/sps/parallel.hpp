#pragma once

#include <cstddef>
#include <functional>

namespace sps {

/// Worker count from SPS_NUM_THREADS (default 1).
int configured_threads();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write results
/// into per-index slots so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads = configured_threads());

} // namespace sps
