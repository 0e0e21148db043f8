#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ehmex {

// Deterministic RNG with explicit algorithms so that byte-identical outputs
// do not depend on the standard library's distribution implementations.
// All randomness in a run flows from one master seed through named
// sub-streams (see Rng::stream).

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_name(std::string_view name) {
    // FNV-1a 64
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        s_[0] = splitmix64(sm);
        s_[1] = splitmix64(sm);
        s_[2] = splitmix64(sm);
        s_[3] = splitmix64(sm);
        has_gauss_ = false;
        gauss_ = 0.0;
    }

    // Derived generator for an independent named sub-stream.
    Rng stream(std::string_view name) const {
        return Rng(s_[0] ^ (s_[3] * 0x9e3779b97f4a7c15ULL) ^ hash_name(name));
    }

    uint64_t next_u64() {
        // xoshiro256**
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n). Modulo bias is negligible for n << 2^64
    // and keeps the draw sequence simple and portable.
    uint64_t uniform_int(uint64_t n) { return n ? next_u64() % n : 0; }

    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(uniform_int(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Standard normal via Marsaglia polar method (no trig, stable across libms).
    double gaussian() {
        if (has_gauss_) {
            has_gauss_ = false;
            return gauss_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        gauss_ = v * m;
        has_gauss_ = true;
        return u * m;
    }

    double gaussian(double mean, double sigma) { return mean + sigma * gaussian(); }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    bool has_gauss_;
    double gauss_;
};

}  // namespace ehmex
