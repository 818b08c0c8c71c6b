#pragma once

#include <cstdlib>
#include <cstddef>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace dfmk {

// Worker count: DFMK_THREADS if set, otherwise the hardware concurrency.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("DFMK_THREADS")) {
        const long n = std::atol(env);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// Static block partition of [0, n). body(i) must be independent across i and
// write only to slot i of any shared output, so results do not depend on the
// number of threads.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min(worker_count(), n == 0 ? std::size_t{1} : n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) body(i);
        });
    }
    for (auto& t : threads) t.join();
}

} // namespace dfmk
