#pragma once

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace hhmc {

// Worker cap: HHMC_THREADS if set, else hardware concurrency.
inline std::size_t thread_cap() {
    if (const char *env = std::getenv("HHMC_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1)
            return static_cast<std::size_t>(v);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? hc : 1;
}

// Static fan-out over [0, n). Tasks must be independent; each one owns its
// RNG stream, so the schedule cannot change results.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)> &fn) {
    const std::size_t workers = std::min(thread_cap(), n ? n : 1);
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n)
                    return;
                fn(i);
            }
        });
    for (auto &t : pool)
        t.join();
}

} // namespace hhmc
