#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

#include "gid/common.hpp"

namespace gid::detail {

/// Runs body(begin, end) over contiguous chunks of [0, n) on up to
/// thread_count() threads. Chunks are disjoint, so per-index writes need no
/// synchronisation.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    const std::size_t threads = std::min<std::size_t>(thread_count(), std::max<std::size_t>(n / 256, 1));
    if (threads <= 1) {
        body(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        workers.emplace_back([&body, begin, end] { body(begin, end); });
    }
    for (auto& w : workers) {
        w.join();
    }
}

}  // namespace gid::detail
