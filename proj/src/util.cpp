#include "stylecl/util.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace stylecl {

namespace {

int g_cap = 0;  // 0 = unresolved

int resolve_cap() {
    if (g_cap > 0) return g_cap;
    int cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap < 1) cap = 1;
    if (const char* env = std::getenv("STYLECL_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) cap = v;
    }
    g_cap = cap;
    return cap;
}

}  // namespace

int worker_threads() { return resolve_cap(); }

void set_worker_cap(int cap) { g_cap = cap >= 1 ? cap : 1; }

void parallel_for(int n, const std::function<void(int)>& fn) {
    const int threads = std::min(worker_threads(), n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next(0);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (std::thread& th : pool) th.join();
}

}  // namespace stylecl
