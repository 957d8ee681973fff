#pragma once

#include <cmath>
#include <cstdint>

namespace idm {

/// Seeded 64-bit PRNG (splitmix64, Steele/Lea/Flood fixed-increment variant).
///
/// This exact generator is pinned so that every dataset, shuffle, and
/// resample in the library is reproducible from a seed alone.  Gaussian
/// draws use Box-Muller on consecutive uniforms; the second variate of
/// each pair is cached, so the draw sequence is a pure function of the
/// seed and the call sequence.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1]; safe as a log() argument.
    double next_double_open() { return 1.0 - next_double(); }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Standard normal via Box-Muller.  Draws two uniforms, returns the
    /// cosine variate and caches the sine variate for the next call.
    double gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const double u1 = next_double_open();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [0, n).  Rejection-free modulo reduction is
    /// avoided; uses 128-bit multiply-shift which is unbiased enough for
    /// resampling at the sizes used here and keeps the stream cheap.
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

private:
    uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

/// splitmix64 finalizer; used to decorrelate derived seeds.
inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derive an independent child seed from a root seed and a stream index.
///
/// Used for per-replicate RNG streams: serial and parallel execution see
/// identical streams because the child seed depends only on (root, index).
inline uint64_t derive_seed(uint64_t root, uint64_t index) {
    return mix64(root ^ mix64(index + 0x9E3779B97F4A7C15ULL));
}

}  // namespace idm
