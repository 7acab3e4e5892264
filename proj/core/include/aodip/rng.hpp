#pragma once

#include <cstdint>
#include <string_view>

namespace aodip {

// Counter-based generator: every draw is a pure function of (key, counter), so
// streams are reproducible regardless of call order or platform integer width.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

    static std::uint64_t mix(std::uint64_t z) noexcept {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Derive an independent key for a named sub-stream.
    static std::uint64_t derive(std::uint64_t key, std::string_view label) noexcept {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : label) {
            h = (h ^ c) * 0x100000001b3ULL;
        }
        return mix(key ^ mix(h));
    }

    static std::uint64_t derive(std::uint64_t key, std::uint64_t index) noexcept {
        return mix(key ^ mix(index + 0x632be59bd9b4e019ULL));
    }

    std::uint64_t next_u64() noexcept { return mix(mix(key_) ^ counter_++); }

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; consumes two counters per draw.
    double normal() noexcept;

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept;

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace aodip
