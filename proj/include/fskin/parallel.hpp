#pragma once

#include <cstdint>
#include <thread>
#include <vector>

namespace fskin {

inline int default_workers() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

/// Static contiguous partition of [0, n) over `workers` threads. Each worker
/// owns a fixed index range, so any output written per index is identical to
/// the sequential run regardless of worker count or scheduling.
template <typename Fn>
void parallel_for(std::int64_t n, int workers, Fn&& fn) {
    if (n <= 0) return;
    if (workers < 1) workers = 1;
    if (workers == 1 || n < 2 * workers) {
        fn(std::int64_t(0), n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        const std::int64_t begin = n * w / workers;
        const std::int64_t end = n * (w + 1) / workers;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace fskin
