#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace garden {

/// Mixes a seed with a stream index into an independent 64-bit seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded generator with platform-independent uniform and normal draws.
///
/// std::normal_distribution output differs between standard libraries, so
/// normals come from Box-Muller over the raw engine. The full state
/// (engine plus cached second normal) serializes to a string.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  template <typename T>
  std::vector<T> normal_vector(std::size_t n, double stddev = 1.0) {
    std::vector<T> out(n);
    for (auto& x : out) x = static_cast<T>(stddev * normal());
    return out;
  }

  /// Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace garden
