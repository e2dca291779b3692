#pragma once

#include <cstddef>
#include <functional>

namespace advkit {

// Runs fn(i) for every i in [0,n). workers<=1 runs inline on the calling
// thread. fn must be safe to call concurrently for distinct i; results should
// be written to per-index slots so the outcome is independent of scheduling.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t)>& fn);

// Hardware concurrency, at least 1.
int default_workers();

}  // namespace advkit
