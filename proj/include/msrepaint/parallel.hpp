#pragma once

#include <cstddef>
#include <functional>

namespace msrepaint {

/// Runs body(i) for i in [0, n) on up to `threads` workers. The first
/// exception stops further scheduling and is rethrown after all workers join.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace msrepaint
