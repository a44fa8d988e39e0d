#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "segkit/error.hpp"

namespace segkit {

// Deterministic 64-bit random source. The engine is std::mt19937_64, whose
// output sequence is fully specified by the C++ standard, so a given seed
// produces the same stream on every platform. All derived draws (uniform
// doubles, bernoulli, bounded integers) use the explicit mappings below
// instead of std::*_distribution, which are implementation-defined.
class Prng {
public:
    explicit Prng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform double in [0, 1): top 53 bits scaled by 2^-53.
    double next_double() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform double in [lo, hi). Requires lo < hi.
    double uniform(double lo, double hi) {
        if (!(lo < hi)) throw ArgError("Prng::uniform: requires lo < hi");
        double v = lo + next_double() * (hi - lo);
        if (v >= hi) v = std::nextafter(hi, lo);  // guard against rounding up
        return v;
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw ArgError("Prng::uniform_index: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    // Derives an independent stream seed from (seed, a, b). Used to give
    // federated nodes and data workers their own reproducible generators.
    static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
        // splitmix64 finalizer
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace segkit
