#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace qple {

// All randomness in the project flows from one user seed through named
// substreams so that runs are reproducible regardless of scheduling.
// Distribution algorithms are spelled out explicitly instead of using
// std::*_distribution, whose output is implementation-defined.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a) {
    return splitmix64(seed ^ splitmix64(a + 0x51ed2701a43c5d1bULL));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char ch : tag) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return mix_seed(seed, h);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag, std::uint64_t a) {
    return mix_seed(mix_seed(seed, tag), a);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1].
    double uniform_pos() { return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    /// Box-Muller; one draw per call (the paired value is discarded to keep
    /// the stream layout independent of call parity).
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    int bernoulli(double p) { return uniform() < p ? 1 : 0; }

    int binomial(int k, double p) {
        int s = 0;
        for (int i = 0; i < k; ++i) s += bernoulli(p);
        return s;
    }

    /// Knuth's product method; adequate for the moderate means used here.
    int poisson(double mu) {
        const double limit = std::exp(-mu);
        double prod = 1.0;
        int k = -1;
        do {
            ++k;
            prod *= uniform_pos();
        } while (prod > limit && k < 100000);
        return k;
    }

  private:
    std::mt19937_64 gen_;
};

inline Rng derive_rng(std::uint64_t seed, std::string_view tag) {
    return Rng(mix_seed(seed, tag));
}

inline Rng derive_rng(std::uint64_t seed, std::string_view tag, std::uint64_t a) {
    return Rng(mix_seed(mix_seed(seed, tag), a));
}

inline Rng derive_rng(std::uint64_t seed, std::string_view tag, std::uint64_t a, std::uint64_t b) {
    return Rng(mix_seed(mix_seed(mix_seed(seed, tag), a), b));
}

}  // namespace qple
