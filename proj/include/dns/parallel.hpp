#pragma once

#include <cstddef>
#include <functional>

namespace dns {

/// Worker count: DNS_NUM_THREADS if set and positive, else hardware concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n). Each index runs exactly once; callers write
/// results into per-index slots so reductions keep a fixed order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace dns
