#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "riginv/error.hpp"

namespace riginv {

// Deterministic generator with self-contained distributions. std::*_distribution
// is implementation-defined, so uniform/normal are spelled out here to keep
// byte-reproducibility a property of this code alone.
//
// Core is splitmix64; stream derivation for sample i is seed ^ (golden * (i+1)).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    static Rng stream(std::uint64_t master_seed, std::uint64_t index) {
        return Rng(master_seed ^ (0x9E3779B97F4A7C15ull * (index + 1)));
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        require(lo <= hi, "Rng::uniform: lo > hi");
        return lo + (hi - lo) * uniform();
    }

    // Box-Muller; one value per call, the mate is cached.
    double normal(double mean, double std) {
        require(std >= 0.0, "Rng::normal: negative std");
        if (has_cached_) {
            has_cached_ = false;
            return mean + std * cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return mean + std * (r * std::cos(a));
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        require(n > 0, "Rng::below: empty range");
        return next_u64() % n;
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace riginv
