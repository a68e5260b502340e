#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace pemal {

/// Runs fn(i) for i in [0, n) on `threads` workers. Results land at index i,
/// so output order never depends on scheduling. The first exception thrown
/// by any task is rethrown after all workers join.
template <typename Fn>
auto parallel_map(std::size_t n, std::size_t threads, Fn&& fn) {
    using R = decltype(fn(std::size_t{}));
    std::vector<R> out(n);
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                out[i] = fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    pool.clear();
    if (error) std::rethrow_exception(error);
    return out;
}

}  // namespace pemal
