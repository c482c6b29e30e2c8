#include "ftnn/rng.hpp"

#include <cmath>

#include "ftnn/error.hpp"

namespace ftnn {

std::uint64_t SeededRng::mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t SeededRng::derive(std::uint64_t seed, std::uint64_t stream) {
    return mix(mix(seed) ^ mix(stream));
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

std::uint64_t SeededRng::next_u64() { return engine_(); }

double SeededRng::next_double() {
    // top 53 bits -> [0,1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
}

std::uint64_t SeededRng::next_below(std::uint64_t n) {
    if (n == 0) throw DomainError("next_below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
        std::uint64_t r = next_u64();
        if (r >= threshold) return r % n;
    }
}

double SeededRng::normal(double mean, double stddev) {
    if (has_spare_normal_) {
        has_spare_normal_ = false;
        return mean + stddev * spare_normal_;
    }
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_normal_ = radius * std::sin(angle);
    has_spare_normal_ = true;
    return mean + stddev * radius * std::cos(angle);
}

}  // namespace ftnn
