#pragma once

// Counter-based randomness. Every draw is a pure function of
// (seed, stream name, sub-keys, counter), so results never depend on the
// order in which independent consumers run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace msplab {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline constexpr std::uint64_t mix_key(std::uint64_t key, std::uint64_t value) noexcept {
    return splitmix64(key ^ splitmix64(value + 0x632BE59BD9B4E019ULL));
}

class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::string_view stream)
        : key_(mix_key(splitmix64(seed), fnv1a64(stream))) {}

    /// Derive an independent child stream, e.g. keyed on (epoch, example id).
    RandomStream derive(std::uint64_t sub_key) const {
        RandomStream child = *this;
        child.key_ = mix_key(key_, sub_key);
        child.counter_ = 0;
        child.spare_.reset();
        return child;
    }

    std::uint64_t next_u64() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound) by rejection; bound must be > 0.
    std::uint64_t below(std::uint64_t bound) noexcept {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % bound;
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Standard normal via Box-Muller.
    double normal() noexcept {
        if (spare_.has) {
            spare_.has = false;
            return spare_.value;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_.has = true;
        spare_.value = r * std::sin(theta);
        return r * std::cos(theta);
    }

    template <class T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    template <class T>
    void shuffle(std::vector<T>& items) noexcept {
        shuffle(std::span<T>(items));
    }

    /// `count` distinct elements of `pool`, uniformly chosen, in pool order.
    template <class T>
    std::vector<T> sample(const std::vector<T>& pool, std::size_t count) {
        std::vector<std::size_t> idx(pool.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        // partial Fisher-Yates over the front
        for (std::size_t i = 0; i < count; ++i) {
            const auto j = i + static_cast<std::size_t>(below(idx.size() - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(count);
        std::sort(idx.begin(), idx.end());
        std::vector<T> out;
        out.reserve(count);
        for (auto i : idx) out.push_back(pool[i]);
        return out;
    }

private:
    struct Spare {
        bool has = false;
        double value = 0.0;
        void reset() { has = false; }
    };

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    Spare spare_;
};

} // namespace msplab
