#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace entity_refine {

/// Worker cap from ENTITY_REFINE_THREADS, else hardware concurrency (at least 1).
int worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Work is split into
/// contiguous blocks; callers write results by index, so output never depends on
/// the thread count. The first exception thrown by any block is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const auto workers = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> threads;
        threads.reserve(workers);
        const std::size_t block = (n + workers - 1) / workers;
        for (std::size_t t = 0; t < workers; ++t) {
            threads.emplace_back([&, t] {
                try {
                    const std::size_t end = std::min(n, (t + 1) * block);
                    for (std::size_t i = t * block; i < end; ++i) {
                        fn(i);
                    }
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace entity_refine
