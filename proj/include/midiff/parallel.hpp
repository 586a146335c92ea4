#pragma once

#include <cstddef>
#include <functional>

namespace midiff {

/// Caps the worker count used by data-parallel loops. 0 selects the hardware
/// concurrency. Results never depend on this setting.
void set_thread_count(int threads);
int thread_count();

/// Runs body(begin, end) over disjoint contiguous chunks of [0, n).
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace midiff
