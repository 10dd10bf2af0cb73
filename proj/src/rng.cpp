#include "promptfed/rng.hpp"

#include <cmath>

namespace promptfed {

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace

RngStream RngStream::derive(std::uint64_t master, std::string_view tag,
                            std::uint64_t a, std::uint64_t b) {
    std::uint64_t k = mix64(master ^ fnv1a(tag));
    k = mix64(k ^ (a * 0xD1B54A32D192ED03ULL));
    k = mix64(k ^ (b * 0x8CB92BA72F3D8DD7ULL));
    return RngStream(k);
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double RngStream::next_gaussian() {
    if (have_cached_) {
        have_cached_ = false;
        return cached_;
    }
    double u1 = next_uniform();
    double u2 = next_uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
}

} // namespace promptfed
