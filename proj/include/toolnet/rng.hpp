#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace toolnet {

namespace detail {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

// Deterministic xoshiro256++ stream. Streams are derived from a root seed and
// a name (and optional salt), so independent consumers never share or reorder
// draws regardless of evaluation order. All derived quantities (uniform,
// normal, bounded ints) use fully specified algorithms, not std::
// distributions, so sequences are stable across standard libraries.
class RngStream {
public:
    explicit RngStream(uint64_t seed) { init(seed); }

    RngStream(uint64_t seed, std::string_view name, uint64_t salt = 0) {
        init(seed ^ detail::fnv1a(name) ^ (salt * 0x9e3779b97f4a7c15ull));
    }

    uint64_t next_u64() {
        uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; the second draw of each pair is cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    // Unbiased integer in [0, n), Lemire's multiply-shift with rejection.
    uint64_t below(uint64_t n) {
        uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        uint64_t lo = static_cast<uint64_t>(m);
        if (lo < n) {
            uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * n;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    void init(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& s : s_) s = detail::splitmix64(sm);
        have_cached_ = false;
    }

    std::array<uint64_t, 4> s_{};
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace toolnet
