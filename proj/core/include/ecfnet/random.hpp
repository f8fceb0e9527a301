#ifndef ECFNET_RANDOM_HPP
#define ECFNET_RANDOM_HPP

#include <cmath>
#include <cstdint>

#include "ecfnet/tensor.hpp"

namespace ecfnet {

// Splittable counter-based generator: each draw hashes (key, counter)
// with the splitmix64 finalizer. No global state; streams derived via
// split() are independent of draw order.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(seed ^ (stream * 0x9E3779B97F4A7C15ULL + 0x1234567D1CE5ULL))) {}

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    bool coin() { return (next_u64() & 1u) != 0; }

    double normal() {
        // Box-Muller; draws two uniforms per call
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Rng split(std::uint64_t stream) const { return Rng(key_, stream + 1); }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace ecfnet

#endif
