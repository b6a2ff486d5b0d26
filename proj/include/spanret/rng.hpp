#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <iterator>
#include <limits>
#include <numbers>
#include <random>
#include <utility>

namespace spanret {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30U)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27U)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31U);
}

/// Folds a list of keys into a seed. Used to give every shard, document,
/// step and layer its own independent stream.
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                                  std::initializer_list<std::uint64_t> keys) noexcept
{
    std::uint64_t h = mix64(seed);
    for (auto k : keys) {
        h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    }
    return h;
}

// Portable draws on top of mt19937_64. The standard distributions are
// implementation-defined, which would break replay across toolchains.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform on [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n)
    {
        std::uint64_t const limit = std::numeric_limits<std::uint64_t>::max()
                                    - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = 0;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Uniform on the closed range [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi)
    {
        return lo + static_cast<std::int64_t>(uniform_index(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    double uniform01() { return static_cast<double>(engine_() >> 11U) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform01() < p; }

    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        double const u2 = uniform01();
        double const r = std::sqrt(-2.0 * std::log(u1));
        double const theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename It>
    void shuffle(It first, It last)
    {
        auto n = static_cast<std::uint64_t>(std::distance(first, last));
        for (std::uint64_t i = n; i > 1; --i) {
            auto j = uniform_index(i);
            using std::swap;
            swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
        }
    }

   private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Stateless counter-based stream: the i-th draw depends only on (key, i).
class CounterRng {
   public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    double uniform01(std::uint64_t counter) const
    {
        return static_cast<double>(mix64(key_ ^ mix64(counter)) >> 11U) * 0x1.0p-53;
    }

   private:
    std::uint64_t key_;
};

} // namespace spanret
