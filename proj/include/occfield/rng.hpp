// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace occ {

/// SplitMix64 finalizer. Used to derive independent child seeds:
/// child = mix(parent ^ mix(stream + 1)).
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
    return mix64(parent ^ mix64(stream + 1));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(parent, a), b);
}

/// Deterministic generator. The standard distributions are implementation
/// defined, so uniform and normal draws are computed here from raw bits.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t index(std::uint64_t n) {
        // Lemire's multiply-shift with rejection keeps it unbiased.
        while (true) {
            const std::uint64_t x = engine_();
            const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
            const auto low = static_cast<std::uint64_t>(m);
            if (low >= n || low >= (-n) % n) {
                return static_cast<std::uint64_t>(m >> 64);
            }
        }
    }

    /// Standard normal via Box-Muller (one draw per call, no caching).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace occ
