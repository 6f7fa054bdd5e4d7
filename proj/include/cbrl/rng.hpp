#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace cbrl {

// 64-bit mix used for seed derivation; constants from the splitmix64 reference.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Deterministic RNG with portable transforms. std::mt19937_64 is bit-exact
// across platforms; the distributions below avoid libstdc++/libc++ specific
// algorithms so every sampled value is reproducible from the seed alone.
// Substreams derived via split() depend only on (seed, index), so a parallel
// harness and a sequential one draw identical per-run streams.
class Rng {
  public:
    explicit Rng(std::uint64_t seed)
        : lineage_(splitmix64(seed ^ 0x5851F42D4C957F2Dull)), eng_(lineage_) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform on [0,1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0,1); safe as a log() argument.
    double uniform01_open() {
        double u = uniform01();
        return u > 0.0 ? u : 0x1.0p-53;
    }

    // Uniform over {0, ..., n-1}.
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    // Categorical draw by CDF scan; p need not be normalized exactly.
    int categorical(const double* p, int n) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += p[i];
        double u = uniform01() * total;
        double c = 0.0;
        int last = 0;
        for (int i = 0; i < n; ++i) {
            if (p[i] <= 0.0) continue;
            c += p[i];
            last = i;
            if (u < c) return i;
        }
        return last;
    }

    int categorical(const std::vector<double>& p) {
        return categorical(p.data(), static_cast<int>(p.size()));
    }

    // T with P(T = t) = (1 - g) g^t on {0, 1, ...}; mean g/(1-g).
    long geometric_gamma(double g) {
        if (g <= 0.0) return 0;
        double u = uniform01_open();
        return static_cast<long>(std::floor(std::log(u) / std::log(g)));
    }

    // Standard normal via Box-Muller (one value per call, no cached spare).
    double normal() {
        double u1 = uniform01_open();
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Independent substream; depends only on this stream's seed and `index`.
    Rng split(std::uint64_t index) const {
        return Rng(splitmix64(lineage_ + 0x9E3779B97F4A7C15ull * (index + 1)));
    }

  private:
    std::uint64_t lineage_;
    std::mt19937_64 eng_;
};

}  // namespace cbrl
