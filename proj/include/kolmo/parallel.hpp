#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace kolmo {

/**
 * Run fn(begin, end) over contiguous chunks of [0, n) on `workers` threads.
 * Chunk boundaries depend only on (n, workers); callers write results into
 * per-index slots and reduce afterwards in index order, so results do not
 * depend on scheduling.
 */
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    const std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
    if (w == 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(w);
    const std::size_t chunk = (n + w - 1) / w;
    for (std::size_t k = 0; k < w; ++k) {
        const std::size_t begin = std::min(n, k * chunk);
        const std::size_t end = std::min(n, begin + chunk);
        threads.emplace_back([&, k, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace kolmo
