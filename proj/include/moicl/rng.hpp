#pragma once

#include <cstdint>
#include <vector>

namespace moicl {

// Deterministic 64-bit generator (splitmix64). Every sampling helper is
// written out explicitly instead of delegating to <random> distributions,
// whose output is implementation-defined; identical seeds must produce
// identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform integer in [0, bound), bound > 0. Rejection keeps it unbiased.
    std::uint64_t next_below(std::uint64_t bound);

    // Uniform double in [0, 1), 53 bits of randomness.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; the pair's second value is cached.
    double next_normal();

    // Fisher-Yates, back to front.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i + 1));
            if (i != j) std::swap(v[i], v[j]);
        }
    }

    // m distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m);

    // Derive an independent stream; mixing keeps nearby (seed, stream)
    // pairs uncorrelated.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

private:
    std::uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace moicl
