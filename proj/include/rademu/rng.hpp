#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rademu {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic per-purpose sub-seed derivation (campaign rounds, dataset
// splits, worker streams).
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    return splitmix64(master ^ splitmix64(stream));
}

// Seedable generator with hand-rolled draw helpers. The engine (mt19937_64)
// is specified bit-exactly by the standard; std::*_distribution is not, so
// we do not use it. Same seed => same stream on every platform.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, bound), bound >= 1. Rejection sampling, no modulo bias.
    uint64_t uniform(uint64_t bound) {
        if (bound <= 1) return 0;
        const uint64_t limit = UINT64_MAX - (UINT64_MAX % bound + 1) % bound;
        uint64_t v = eng_();
        while (v > limit) v = eng_();
        return v % bound;
    }

    // Uniform in [lo, hi] inclusive.
    uint64_t uniform_incl(uint64_t lo, uint64_t hi) { return lo + uniform(hi - lo + 1); }

    // Uniform double in [0, 1) with 53 bits of precision.
    double uniform_real() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform_real() < p; }

    // Standard normal via Box-Muller (weight init).
    double normal() {
        double u1 = uniform_real();
        while (u1 == 0.0) u1 = uniform_real();
        double u2 = uniform_real();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

  private:
    std::mt19937_64 eng_;
};

}  // namespace rademu
