#include "causalab/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace causalab::numkit {

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& word : state_) {
        word = splitmix64(s);
    }
}

// xoshiro256**
uint64_t Rng::next_u64() {
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

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal(double mean, double stddev) {
    if (has_spare_) {
        has_spare_ = false;
        return mean + spare_ * stddev;
    }
    const double two_pi = 6.283185307179586476925286766559;
    const double angle = uniform() * two_pi;
    const double radius = std::sqrt(-2.0 * std::log(1.0 - uniform()));
    spare_ = std::sin(angle) * radius;
    has_spare_ = true;
    return mean + std::cos(angle) * radius * stddev;
}

int Rng::below(int n) {
    if (n <= 0) {
        throw std::invalid_argument("Rng::below: n must be positive");
    }
    // Rejection sampling to avoid modulo bias.
    const uint64_t bound = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t r = next_u64();
    while (r >= limit) {
        r = next_u64();
    }
    return static_cast<int>(r % bound);
}

uint64_t derive_seed(uint64_t parent, std::string_view label) {
    // FNV-1a over the label folded into the parent via splitmix.
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : label) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    uint64_t x = parent ^ h;
    return splitmix64(x);
}

}  // namespace causalab::numkit
