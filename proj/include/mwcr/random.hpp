#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace mwcr {

/// 64-bit SplitMix generator. Fixed output sequence on every platform, cheap
/// to seed, so each (outputation, cluster) pair can own an independent stream.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

/// Keyed SipHash-2-4 of a path of integers under `master`. Used to derive
/// independent stream seeds from (master seed, job index, sub-index, ...).
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

/// Uniform integer in [0, bound) by Lemire's multiply-and-reject method.
template <typename Rng>
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
    std::uint64_t x = rng();
    unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            x = rng();
            m = static_cast<unsigned __int128>(x) * bound;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

/// Uniform double in (0, 1) from the top 53 bits.
template <typename Rng>
double uniform_open(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal variate (Marsaglia polar method, one value per call).
template <typename Rng>
double standard_normal(Rng& rng) {
    for (;;) {
        const double u = 2.0 * uniform_open(rng) - 1.0;
        const double v = 2.0 * uniform_open(rng) - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
}

}  // namespace mwcr
