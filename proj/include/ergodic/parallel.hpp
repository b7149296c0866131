#pragma once

#include <atomic>
#include <cstdlib>
#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace ergodic {

// Thread budget: CLI flag wins, then ERGODIC_INTERVAL_THREADS, then hardware.
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("ERGODIC_INTERVAL_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

// Runs body(i) for i in [0, n). Work is partitioned by index, so any
// per-index output written to preallocated storage is independent of the
// thread count. Reductions over the outputs must be done serially afterwards.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
    threads = resolve_threads(threads);
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            body(i);
        }
    };
    std::vector<std::thread> pool;
    int use = std::min<std::size_t>(threads, n);
    pool.reserve(use);
    for (int t = 0; t < use; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

// Deterministic work-list runner. process(item) may push new items through
// the supplied sink; outputs are collected per item and must be canonically
// sorted by the caller before use. Item identity does not depend on the
// order in which workers pick them up.
template <typename Item, typename Fn>
void run_worklist(std::deque<Item>& queue, int threads, Fn process) {
    threads = resolve_threads(threads);
    if (threads <= 1) {
        while (!queue.empty()) {
            Item it = std::move(queue.front());
            queue.pop_front();
            process(std::move(it), [&](Item child) { queue.push_back(std::move(child)); });
        }
        return;
    }
    std::mutex mu;
    std::atomic<int> in_flight{0};
    std::atomic<bool> failed{false};
    std::mutex err_mu;
    std::exception_ptr first_err;
    auto worker = [&] {
        for (;;) {
            if (failed.load()) return;
            Item it;
            {
                std::unique_lock<std::mutex> lk(mu);
                if (queue.empty()) {
                    if (in_flight.load() == 0) return;
                    lk.unlock();
                    std::this_thread::yield();
                    continue;
                }
                it = std::move(queue.front());
                queue.pop_front();
                in_flight.fetch_add(1);
            }
            try {
                process(std::move(it), [&](Item child) {
                    std::lock_guard<std::mutex> lk(mu);
                    queue.push_back(std::move(child));
                });
            } catch (...) {
                {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!first_err) first_err = std::current_exception();
                }
                failed.store(true);
            }
            in_flight.fetch_sub(1);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_err) {
        queue.clear();
        std::rethrow_exception(first_err);
    }
}

} // namespace ergodic
