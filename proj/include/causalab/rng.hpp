#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace causalab::numkit {

// Deterministic RNG with self-contained distributions. std::normal_distribution
// is implementation-defined, so the Gaussian path is spelled out here to keep
// checkpoints bit-reproducible across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    // Uniform in [0, 1) with 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);
    // Box-Muller with a cached spare.
    double normal(double mean = 0.0, double stddev = 1.0);
    // Uniform integer in [0, n). n must be > 0.
    int below(int n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(below(i + 1))]);
        }
    }

private:
    uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stable seed derivation for independent streams: mixes a parent seed with a
// short label so e.g. the scene stream and the init stream never collide.
uint64_t derive_seed(uint64_t parent, std::string_view label);

}  // namespace causalab::numkit
