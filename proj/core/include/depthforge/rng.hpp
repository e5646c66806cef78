#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace depthforge {

// splitmix64 finalizer. Used for seeding and for deriving independent
// child seeds from (master seed, index) pairs.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t child_seed(uint64_t master, uint64_t index) {
    return mix64(master + 0x9e3779b97f4a7c15ull * (index + 1));
}

// xoshiro256** with hand-rolled distributions. The standard <random>
// distributions are implementation-defined, which would break the
// bit-exact reproducibility contract across toolchains; everything that
// consumes randomness in this library goes through this generator.
class Rng {
  public:
    explicit Rng(uint64_t seed) {
        uint64_t s = seed;
        for (auto& word : state_) {
            s += 0x9e3779b97f4a7c15ull;
            uint64_t z = s;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            word = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) via Lemire's multiply-shift.
    uint64_t below(uint64_t n) {
        return uint64_t((__uint128_t(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller. Two uniforms per draw; the sine
    // partner is discarded to keep the draw count predictable.
    double normal() {
        const double u1 = 1.0 - uniform(); // (0, 1], keeps log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    // Standard normal redrawn until |x| <= trunc. Redraw rather than
    // clamp, so no probability mass accumulates at the boundary.
    double truncated_normal(double trunc) {
        for (;;) {
            const double x = normal();
            if (std::abs(x) <= trunc) return x;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    static uint64_t rotl(uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<uint64_t, 4> state_{};
};

} // namespace depthforge
