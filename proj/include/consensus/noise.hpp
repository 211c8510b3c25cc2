#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace consensus {

// Counter-based (stateless) Gaussian noise stream.  Every deviate is
// addressed by (realization m, particle j, step k, coordinate i), so a
// subsystem run consumes exactly the same numbers as the corresponding
// particles of a larger coupled system, in any order of evaluation.
//
// The generator is Philox4x32-10, keyed by the 64-bit seed.
class NoiseStream {
public:
    explicit NoiseStream(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Step index used for initial-condition draws ("step -1").
    static constexpr std::uint32_t kInitStep = 0xFFFFFFFFu;

    // Standard normal deviate at address (m, j, k, i).
    double normal(std::uint32_t m, std::uint32_t j, std::uint32_t k,
                  std::uint32_t i) const {
        std::uint32_t x[4] = {m, j, k, i};
        philox(x);
        const double u1 = to_unit_open(x[0], x[1]);
        const double u2 = to_unit_open(x[2], x[3]);
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform deviate in (0, 1) at the same address space.
    double uniform(std::uint32_t m, std::uint32_t j, std::uint32_t k,
                   std::uint32_t i) const {
        std::uint32_t x[4] = {m, j, k, i};
        philox(x);
        return to_unit_open(x[0], x[1]);
    }

private:
    static std::uint32_t mulhi(std::uint32_t a, std::uint32_t b) {
        return static_cast<std::uint32_t>(
            (static_cast<std::uint64_t>(a) * b) >> 32);
    }

    void philox(std::uint32_t x[4]) const {
        std::uint32_t k0 = static_cast<std::uint32_t>(seed_);
        std::uint32_t k1 = static_cast<std::uint32_t>(seed_ >> 32);
        for (int round = 0; round < 10; ++round) {
            const std::uint32_t hi0 = mulhi(0xD2511F53u, x[0]);
            const std::uint32_t lo0 = 0xD2511F53u * x[0];
            const std::uint32_t hi1 = mulhi(0xCD9E8D57u, x[2]);
            const std::uint32_t lo1 = 0xCD9E8D57u * x[2];
            x[0] = hi1 ^ x[1] ^ k0;
            x[1] = lo1;
            x[2] = hi0 ^ x[3] ^ k1;
            x[3] = lo0;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
    }

    // 64 random bits -> double in (0, 1); never returns 0 so log() is safe.
    static double to_unit_open(std::uint32_t lo, std::uint32_t hi) {
        const std::uint64_t bits =
            (static_cast<std::uint64_t>(hi) << 32) | lo;
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    }

    std::uint64_t seed_;
};

}  // namespace consensus
