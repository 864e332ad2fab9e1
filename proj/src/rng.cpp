#include "moicl/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace moicl {

std::uint64_t Rng::next_below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("Rng::next_below: bound must be > 0");
    // Reject draws from the tail that would bias the modulus.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % bound;
}

double Rng::next_normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    // u1 in (0,1] so log() stays finite.
    const double u1 = 1.0 - next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t m) {
    if (m > n) throw std::invalid_argument("Rng::sample_without_replacement: m > n");
    // Partial Fisher-Yates over an index vector; fine at desk scale.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(next_below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    return idx;
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream) {
    Rng mixer(seed ^ (0x5851f42d4c957f2dULL * (stream + 1)));
    mixer.next_u64();
    return mixer.next_u64();
}

}  // namespace moicl
