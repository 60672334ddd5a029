#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace hgcnet {

// Worker-thread cap. 0 means single-threaded deterministic mode (the default);
// the HGC_THREADS environment variable seeds the initial value.
inline int& worker_threads_ref() {
    static int value = [] {
        const char* env = std::getenv("HGC_THREADS");
        if (!env) return 0;
        const int v = std::atoi(env);
        return v < 0 ? 0 : v;
    }();
    return value;
}

inline int worker_threads() { return worker_threads_ref(); }
inline void set_worker_threads(int n) { worker_threads_ref() = n < 0 ? 0 : n; }

// Runs fn(begin..end) partitioned into contiguous chunks, one per worker.
// Chunk boundaries depend only on the thread count, so any per-chunk
// reduction that is later combined in chunk order stays deterministic.
inline void parallel_chunks(int begin, int end,
                            const std::function<void(int chunk_index, int chunk_begin, int chunk_end)>& fn) {
    const int total = end - begin;
    const int threads = std::min(worker_threads(), total);
    if (threads <= 1 || total <= 1) {
        fn(0, begin, end);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    const int base = total / threads;
    const int extra = total % threads;
    int cursor = begin;
    for (int t = 0; t < threads; ++t) {
        const int len = base + (t < extra ? 1 : 0);
        const int lo = cursor;
        const int hi = cursor + len;
        cursor = hi;
        pool.emplace_back([&fn, t, lo, hi] { fn(t, lo, hi); });
    }
    for (auto& th : pool) th.join();
}

inline int chunk_count(int begin, int end) {
    const int total = end - begin;
    const int threads = std::min(worker_threads(), total);
    return threads <= 1 ? 1 : threads;
}

}  // namespace hgcnet
