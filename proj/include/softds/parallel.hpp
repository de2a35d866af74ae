#pragma once

// Deterministic data parallelism over items.
//
// Work is cut into fixed-size blocks whose boundaries depend only on the
// item count. Threads claim whole blocks; reductions store one partial per
// block and combine the partials in block order on the calling thread, so
// results are bitwise identical for any thread count.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace softds {

inline constexpr std::size_t kItemBlock = 256;

/// Resolves a requested worker count: 0 means SOFTDS_THREADS, then hardware concurrency.
inline unsigned resolve_threads(unsigned requested) {
    if (requested > 0) {
        return requested;
    }
    if (const char* env = std::getenv("SOFTDS_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) {
                return static_cast<unsigned>(v);
            }
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

inline std::size_t block_count(std::size_t n_items) {
    return (n_items + kItemBlock - 1) / kItemBlock;
}

/// Calls fn(block_index, begin, end) for every block. fn must only write
/// state owned by its block.
template <typename Fn>
void for_each_block(std::size_t n_items, unsigned threads, Fn&& fn) {
    const std::size_t n_blocks = block_count(n_items);
    auto run = [&](std::size_t b) {
        const std::size_t begin = b * kItemBlock;
        fn(b, begin, std::min(n_items, begin + kItemBlock));
    };
    const unsigned workers = static_cast<unsigned>(
        std::min<std::size_t>(std::max(1u, threads), n_blocks));
    if (workers <= 1) {
        for (std::size_t b = 0; b < n_blocks; ++b) {
            run(b);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        try {
            for (std::size_t b = next++; b < n_blocks; b = next++) {
                run(b);
            }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) {
                failure = std::current_exception();
            }
            next = n_blocks;
        }
    };
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers - 1);
        for (unsigned t = 1; t < workers; ++t) {
            pool.emplace_back(worker);
        }
        worker();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

/// Blocked reduction of a vector-valued quantity. `accumulate(begin, end, out)`
/// adds the contribution of items [begin, end) into `out` (pre-zeroed, length
/// `width`). Partials are summed in block order.
template <typename Accumulate>
std::vector<double> reduce_blocks(std::size_t n_items, std::size_t width, unsigned threads,
                                  Accumulate&& accumulate) {
    const std::size_t n_blocks = block_count(n_items);
    std::vector<double> partials(n_blocks * width, 0.0);
    for_each_block(n_items, threads, [&](std::size_t b, std::size_t begin, std::size_t end) {
        accumulate(begin, end, std::span<double>(partials.data() + b * width, width));
    });
    std::vector<double> total(width, 0.0);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        for (std::size_t w = 0; w < width; ++w) {
            total[w] += partials[b * width + w];
        }
    }
    return total;
}

} // namespace softds
