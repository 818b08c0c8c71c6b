#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace dfmk {

namespace detail {

// splitmix64 finalizer (Steele, Lea, Flood / Vigna).
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = UINT64_C(0x9E3779B97F4A7C15);

} // namespace detail

// Counter-based stream keyed by (seed, a, b, c, d). Streams with distinct
// keys are independent, so parallel workers can draw without coordination
// and the result of a simulation does not depend on thread count.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0,
                       std::uint64_t c = 0, std::uint64_t d = 0) {
        std::uint64_t k = detail::mix64(seed + detail::kGolden);
        k = detail::mix64(k ^ (a + detail::kGolden));
        k = detail::mix64(k ^ (b + detail::kGolden));
        k = detail::mix64(k ^ (c + detail::kGolden));
        k = detail::mix64(k ^ (d + detail::kGolden));
        key_ = k;
    }

    std::uint64_t next_u64() {
        return detail::mix64(key_ + (++counter_) * detail::kGolden);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1); never returns an exact 0.
    double next_open() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Standard Gumbel draw.
    double next_gumbel() {
        return -std::log(-std::log(next_open()));
    }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("RngStream: next_below(0)");
        // Rejection to avoid modulo bias.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace dfmk
