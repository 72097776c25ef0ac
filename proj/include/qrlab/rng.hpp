#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace qrlab {

// All randomness in the project flows from one root seed. Module-level
// streams are derived by hashing a label into the root seed, so adding a
// consumer never shifts another consumer's stream.
inline uint64_t derive_seed(uint64_t root, std::string_view label) {
    uint64_t h = 1469598103934665603ull ^ root;
    for (char c : label) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ull;
    }
    // splitmix64 finalizer
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

// mt19937_64 with hand-rolled distributions; std:: distributions are
// implementation-defined and would break cross-toolchain determinism.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (the pair's second half is discarded
    // to keep the consumption pattern trivially predictable)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        // modulo bias is negligible for desk-scale n against 2^64
        return engine_() % n;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace qrlab
