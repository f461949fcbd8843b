#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace fundus {

/// Seeded generator whose draws are identical on every conforming
/// platform: only the engine is taken from <random>, the distributions
/// (which the standard leaves implementation-defined) are written here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Derives an independent stream, e.g. for (seed, epoch) pairs.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n) without modulo bias.
  std::uint64_t index(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fundus
