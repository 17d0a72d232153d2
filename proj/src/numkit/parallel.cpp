#include "invsen/numkit/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace invsen::numkit {

namespace {

std::size_t initial_threads() {
    if (const char* env = std::getenv("INVSEN_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::atomic<std::size_t>& thread_cap() {
    static std::atomic<std::size_t> cap{initial_threads()};
    return cap;
}

// Below this many multiply-adds a kernel runs inline.
constexpr std::size_t kMinParallelWork = 1u << 18;

}  // namespace

std::size_t max_threads() { return thread_cap().load(); }

void set_max_threads(std::size_t n) { thread_cap().store(std::max<std::size_t>(1, n)); }

void parallel_rows(std::size_t n, std::size_t work_per_row,
                   const std::function<void(std::size_t, std::size_t)>& body) {
    const std::size_t threads = std::min(max_threads(), n);
    if (threads <= 1 || n * work_per_row < kMinParallelWork) {
        body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 1; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    body(0, std::min(n, chunk));
    for (auto& th : pool) th.join();
}

}  // namespace invsen::numkit
