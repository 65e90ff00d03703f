#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mwcr {

/// Worker count to use when the caller passes 0.
inline int default_workers() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(job) for job in [0, jobs) on up to `workers` threads, pulling jobs
/// from a shared counter. Results must be written to per-job slots so that the
/// outcome does not depend on scheduling. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t jobs, int workers, Fn&& fn) {
    if (workers <= 0) workers = default_workers();
    const auto threads = static_cast<std::size_t>(std::min<std::size_t>(jobs, workers));
    if (threads <= 1) {
        for (std::size_t j = 0; j < jobs; ++j) fn(j);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            if (stop.load(std::memory_order_relaxed)) return;
            const std::size_t j = next.fetch_add(1, std::memory_order_relaxed);
            if (j >= jobs) return;
            try {
                fn(j);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                stop = true;
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(body);
    pool.clear();
    if (error) std::rethrow_exception(error);
}

}  // namespace mwcr
