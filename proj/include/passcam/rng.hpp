#pragma once

#include <cstdint>
#include <random>

namespace passcam {

/// Seeded generator whose derived distributions are bit-identical on every
/// platform. std:: distributions are implementation-defined, so the
/// transforms below are written out explicitly on top of mt19937_64.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream for (seed, stream index); used so that generation
    /// order and thread count never influence the values drawn.
    static Rng derive(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi);
    bool bernoulli(double p) { return uniform() < p; }
    /// Standard normal via Box-Muller (no cached second value).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    /// Truncated at +-2 standard deviations by resampling.
    double truncated_normal(double stddev);

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace passcam
