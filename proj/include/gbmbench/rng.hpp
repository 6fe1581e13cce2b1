// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gbmbench {

/// Seeded random stream. All distributions are generated from raw mt19937_64
/// output through fixed arithmetic, so a given seed produces the same draw
/// sequence on every platform and standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller. Two uniforms consumed per call.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Integer in [lo, hi), unbiased via rejection.
    int64_t randint(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo);
        if (span == 0) return lo;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return lo + static_cast<int64_t>(x % span);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(randint(0, static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <class T>
    const T& choice(const std::vector<T>& v) {
        return v[static_cast<size_t>(randint(0, static_cast<int64_t>(v.size())))];
    }

    /// Derive an independent stream. splitmix64 over (seed', stream_id) keeps
    /// sibling streams decorrelated regardless of how much the parent was used.
    Rng fork(uint64_t stream_id) {
        uint64_t z = gen_() + 0x9e3779b97f4a7c15ULL * (stream_id + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

    /// Named fork: stream id is the FNV-1a hash of the label.
    Rng fork(const std::string& name) {
        uint64_t h = 1469598103934665603ULL;
        for (const char c : name) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ULL;
        }
        return fork(h);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace gbmbench
