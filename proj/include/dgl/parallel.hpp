#pragma once

#include <cstddef>
#include <functional>

namespace dgl {

// Worker count used by parallel_for. Defaults to DGL_THREADS or the hardware
// concurrency. Results never depend on it: work is split into fixed tasks and
// every reduction is done by the caller in task order.
std::size_t worker_count();
void set_worker_count(std::size_t n);

// Runs task(i) for i in [0, n_tasks). Exceptions from tasks are rethrown
// (the one with the lowest task index wins).
void parallel_for(std::size_t n_tasks, const std::function<void(std::size_t)>& task);

}  // namespace dgl
