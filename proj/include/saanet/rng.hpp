#pragma once

#include <cstdint>
#include <random>

#include "saanet/config.hpp"

namespace saanet {

/// Seeded generator whose derived distributions are computed here rather than
/// by <random>'s distribution classes, so streams are identical across
/// standard library implementations.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }
    double normal(double mean = 0.0, double stddev = 1.0);
    /// Independent child stream.
    Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

   private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace saanet
