#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace steinpp {

/// Thread count resolution: explicit request > STEINPP_THREADS > hardware.
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("STEINPP_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

/// Runs fn(0) … fn(reps-1), each exactly once, across a worker pool.
/// Replicates own their outputs (slot per index) and their RNG streams, so
/// results are identical for every thread count. The first exception thrown
/// by any replicate is rethrown after the pool drains.
template <class Fn>
void run_replicates(std::size_t reps, int threads, Fn&& fn) {
    if (reps == 0) return;
    int workers = resolve_threads(threads);
    if (static_cast<std::size_t>(workers) > reps) workers = static_cast<int>(reps);
    if (workers <= 1) {
        for (std::size_t r = 0; r < reps; ++r) fn(r);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr err;
    auto worker = [&] {
        for (;;) {
            const std::size_t r = next.fetch_add(1);
            if (r >= reps) return;
            try {
                fn(r);
            } catch (...) {
                {
                    const std::lock_guard<std::mutex> lock(err_mutex);
                    if (!err) err = std::current_exception();
                }
                next.store(reps);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

} // namespace steinpp
