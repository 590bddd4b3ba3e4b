#pragma once

#include <cstddef>
#include <functional>

namespace smewma {

/// Worker count: `requested` if positive, else SCORE_MEWMA_THREADS if set to
/// a positive value, else the hardware concurrency.
int resolve_threads(int requested = 0);

/// Runs body(begin, end) over contiguous chunks of [0, n) on up to `threads`
/// workers. Exceptions from workers are rethrown on the caller's thread.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace smewma
