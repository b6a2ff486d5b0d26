#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace spanret {

/// Worker count: SPANRET_THREADS when set to a positive integer, otherwise
/// the hardware concurrency (at least 1).
[[nodiscard]] inline std::size_t worker_count()
{
    if (const char* env = std::getenv("SPANRET_THREADS")) {
        char* end = nullptr;
        long value = std::strtol(env, &end, 10);
        if (end != env && value > 0) {
            return static_cast<std::size_t>(value);
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs body(shard) for shard in [0, shards). Work placement is fixed by the
/// shard index, so results written per shard are independent of thread count.
template <typename Body>
void parallel_shards(std::size_t shards, std::size_t threads, Body&& body)
{
    threads = std::min(std::max<std::size_t>(threads, 1), shards);
    if (threads <= 1) {
        for (std::size_t s = 0; s < shards; ++s) {
            body(s);
        }
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t s = t; s < shards; s += threads) {
                    body(s);
                }
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) {
        th.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

/// Contiguous [begin, end) range of shard `shard` when n items are split into
/// `shards` nearly equal parts.
[[nodiscard]] inline std::pair<std::size_t, std::size_t> shard_range(std::size_t n,
                                                                     std::size_t shards,
                                                                     std::size_t shard)
{
    std::size_t const base = n / shards;
    std::size_t const extra = n % shards;
    std::size_t const begin = shard * base + std::min(shard, extra);
    return {begin, begin + base + (shard < extra ? 1 : 0)};
}

} // namespace spanret
