#pragma once

#include <cstdint>
#include <string_view>

namespace promptfed {

// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

// Counter-based stream: output i is a pure function of (key, i), so streams
// derived from distinct (master_seed, tag, a, b) tuples are independent of
// each other and of evaluation order.
class RngStream {
public:
    explicit RngStream(std::uint64_t key) : state_(key) {}

    // Named derivation: (master_seed, purpose_tag, client_id, round) and the like.
    static RngStream derive(std::uint64_t master, std::string_view tag,
                            std::uint64_t a = 0, std::uint64_t b = 0);

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix64(state_);
    }

    // [0, 1)
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_uniform();
    }

    // Unbiased integer in [0, n).
    std::uint64_t next_below(std::uint64_t n);

    // Standard normal via Box-Muller (pairs cached within the stream).
    double next_gaussian();

private:
    std::uint64_t state_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

} // namespace promptfed
