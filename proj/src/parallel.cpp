#include "cyclevae/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace cyclevae {

namespace {
// Workers run with this flag set so nested parallel_for calls execute
// inline instead of spawning threads recursively.
thread_local bool inside_worker = false;
}  // namespace

int max_threads() {
    static const int cached = [] {
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        if (const char* env = std::getenv("CYCLEVAE_THREADS")) {
            const int cap = std::atoi(env);
            if (cap >= 1) n = std::min(n, cap);
        }
        return n;
    }();
    return cached;
}

void parallel_for_chunks(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)>& fn) {
    const int workers = max_threads();
    if (workers <= 1 || n < 2 || inside_worker) {
        if (n > 0) fn(0, n);
        return;
    }
    const int chunks = std::min<std::int64_t>(workers, n);
    const std::int64_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(chunks));
    for (int c = 0; c < chunks; ++c) {
        const std::int64_t begin = c * per;
        const std::int64_t end = std::min<std::int64_t>(begin + per, n);
        if (begin >= end) break;
        threads.emplace_back([&fn, begin, end] {
            inside_worker = true;
            fn(begin, end);
        });
    }
    for (auto& t : threads) t.join();
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    parallel_for_chunks(n, [&fn](std::int64_t begin, std::int64_t end) {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
    });
}

}  // namespace cyclevae
