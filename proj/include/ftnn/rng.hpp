#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ftnn {

/// Deterministic pseudo-random stream.
///
/// Engine is std::mt19937_64 (fully specified by the standard) seeded through
/// a splitmix64 finalizer, so the raw 64-bit stream and everything derived
/// from it by pure arithmetic (uniform doubles, bounded ints, shuffles) is
/// identical across runs and platforms for the same seed.  normal() goes
/// through libm (log/cos), which is reproducible per run but only as portable
/// as the host libm.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();

    /// Uniform on [0, 1) with 53 random bits.
    double next_double();

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi);

    /// Unbiased integer in [0, n) by rejection sampling; n must be > 0.
    std::uint64_t next_below(std::uint64_t n);

    /// Box-Muller normal draw (second value of each pair is cached).
    double normal(double mean, double stddev);

    /// In-place Fisher-Yates shuffle driven by next_below.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        if (items.size() < 2) return;
        for (std::size_t i = items.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i + 1));
            std::swap(items[i], items[j]);
        }
    }

    /// splitmix64 finalizer; the mixing primitive behind seed derivation.
    static std::uint64_t mix(std::uint64_t z);

    /// Derive an independent stream id from a base seed.  Used everywhere a
    /// run needs several decoupled streams (init / shuffle / dropout / ...).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

}  // namespace ftnn
