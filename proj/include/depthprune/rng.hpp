#pragma once

#include <cstdint>
#include <random>

namespace depthprune {

/// Seeded 64-bit Mersenne Twister; uniform and normal draws come straight from the raw stream.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 80) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller.
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    /// Independent stream for substream index i, derived from this seed.
    static Rng substream(std::uint64_t seed, std::uint64_t index);

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace depthprune
