#ifndef MMZI_PARALLEL_H
#define MMZI_PARALLEL_H

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mmzi {

/// Runs body(i) for i in [0, count) on up to hardware_concurrency threads.
/// Indices are split into contiguous blocks; callers write results into
/// per-index slots so the outcome does not depend on scheduling. The first
/// exception thrown by any body is rethrown on the calling thread.
template <typename Body>
void parallel_for(size_t count, Body &&body) {
    const size_t workers = std::min<size_t>(count, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (size_t i = 0; i < count; i++) {
            body(i);
        }
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (size_t w = 0; w < workers; w++) {
        const size_t begin = count * w / workers;
        const size_t end = count * (w + 1) / workers;
        threads.emplace_back([&, begin, end] {
            try {
                for (size_t i = begin; i < end; i++) {
                    body(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        });
    }
    for (auto &t : threads) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

}  // namespace mmzi

#endif
