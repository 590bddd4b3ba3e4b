#pragma once

#include <cstdint>
#include <random>

namespace smewma {

/// Counter-addressed random stream: the pair (seed, stream) fully determines
/// the sequence, so replication i draws the same numbers no matter which
/// thread runs it or in what order.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  /// Uniform on [0, 1) with 53 random bits. Defined here rather than via
  /// std::uniform_real_distribution, whose output is implementation-defined.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace smewma
