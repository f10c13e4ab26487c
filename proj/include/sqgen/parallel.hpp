#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace sqgen {

// Worker count: SQGEN_THREADS when set (minimum 1), else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) over contiguous chunks. Results written by index
// keep input order; the first exception is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace sqgen
