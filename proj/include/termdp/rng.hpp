#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace termdp {

/// Seeded random stream. All sampling goes through the raw 64-bit engine
/// output so that sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  int uniform_int(int n);

  bool bernoulli(double p) { return uniform() < p; }

  /// Index drawn from an unnormalized non-negative weight vector.
  int categorical(std::span<const double> weights);

  /// Standard normal via Box-Muller.
  double normal();

  /// Independent child stream; the same (seed, stream) pair always yields
  /// the same child.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace termdp
