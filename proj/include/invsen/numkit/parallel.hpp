#pragma once

#include <cstddef>
#include <functional>

namespace invsen::numkit {

/// Worker cap for row-partitioned kernels. Defaults to INVSEN_THREADS when set,
/// otherwise the hardware concurrency.
std::size_t max_threads();
void set_max_threads(std::size_t n);

/// Split [0, n) into contiguous chunks and run body(begin, end) on each.
/// Chunks never share output rows, so results do not depend on the thread count.
void parallel_rows(std::size_t n, std::size_t work_per_row,
                   const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace invsen::numkit
