#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace twostream {

// Static-partition parallel loop. Callers write results into per-index slots
// and aggregate in index order afterwards, so the outcome is identical for
// any thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (threads <= 0) {
        const unsigned hc = std::thread::hardware_concurrency();
        threads = static_cast<int>(std::clamp(hc, 1u, 8u));
    }
    threads = std::min(threads, n);
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        const int lo = static_cast<int>(static_cast<long long>(n) * t / threads);
        const int hi = static_cast<int>(static_cast<long long>(n) * (t + 1) / threads);
        pool.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace twostream
