#ifndef PDSSL_PARALLEL_HPP
#define PDSSL_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace pdssl {

/// Worker count: PDSSL_THREADS when set (>= 1), else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
/// visited exactly once; callers write results by index, so output never
/// depends on scheduling. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pdssl

#endif  // PDSSL_PARALLEL_HPP
