#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace usat {

/// Counter-based 64-bit generator (splitmix64). All randomness in the
/// project flows through this type so that runs are reproducible from a
/// single root seed, independent of platform or worker count.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Contract-level: one 64-bit draw reduced
    /// modulo n (bias is negligible for the small n used here).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    bool coin() { return (next_u64() & 1ull) != 0; }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Deterministic sub-stream derivation: mixes a textual tag and a salt into
/// a seed. Used to split the root seed into independent streams (init,
/// shuffle, masks, flips, ...).
inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t salt = 0) {
    uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    Rng mix(seed ^ h);
    mix.next_u64();
    Rng mix2(mix.next_u64() + salt * 0x9E3779B97F4A7C15ull);
    return mix2.next_u64();
}

} // namespace usat
