#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

#if defined(__linux__)
#include <sched.h>
#endif

namespace aef {

namespace parallel_detail {
// hardware_concurrency ignores cgroup/affinity limits; prefer the affinity
// mask where available.
inline unsigned available_cpus() {
#if defined(__linux__)
    cpu_set_t set;
    if (sched_getaffinity(0, sizeof set, &set) == 0) {
        const int n = CPU_COUNT(&set);
        if (n > 0) return unsigned(n);
    }
#endif
    return std::thread::hardware_concurrency();
}
}  // namespace parallel_detail

// Global worker count for op-internal parallelism. Results are bitwise
// deterministic for a fixed count: work is split into contiguous index
// ranges and each worker writes a disjoint slice.
inline int& thread_count() {
    static int n = std::max(1u, std::min(8u, parallel_detail::available_cpus()));
    return n;
}

inline void set_thread_count(int n) { thread_count() = std::max(1, n); }

namespace parallel_detail {
inline bool& inside_worker() {
    static thread_local bool flag = false;
    return flag;
}
}  // namespace parallel_detail

template <class Fn>
void parallel_for(int64_t begin, int64_t end, Fn&& fn, int64_t grain = 1024) {
    const int64_t n = end - begin;
    if (n <= 0) return;
    // nested calls run serially: workers must not spawn workers
    const int workers = parallel_detail::inside_worker()
                            ? 1
                            : int(std::min<int64_t>(thread_count(), (n + grain - 1) / grain));
    if (workers <= 1) {
        fn(begin, end);
        return;
    }
    const int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (int w = 1; w < workers; ++w) {
        const int64_t lo = begin + w * chunk;
        const int64_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([=, &fn] {
            parallel_detail::inside_worker() = true;
            fn(lo, hi);
            parallel_detail::inside_worker() = false;
        });
    }
    {
        parallel_detail::inside_worker() = true;
        fn(begin, std::min(end, begin + chunk));
        parallel_detail::inside_worker() = false;
    }
    for (auto& t : pool) t.join();
}

}  // namespace aef
