#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace aepo {

/// Mixes an arbitrary number of 64-bit words into one seed (splitmix64 chain).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words);

/// Deterministic random stream. Wraps std::mt19937_64 (whose output sequence
/// is pinned by the standard) and maps to doubles with a fixed 53-bit rule so
/// results are reproducible across platforms and library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform double in [0, 1).
  double next_double();

  /// Uniform integer in [0, n).
  int next_int(int n);

  /// Categorical draw by CDF walk. `probs` must be a probability vector.
  int categorical(std::span<const double> probs);

  /// Derives an independent child stream. Children with distinct `stream`
  /// values never collide regardless of how much the parent is consumed.
  Rng split(std::uint64_t stream) const;

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

 private:
  Rng() = default;
  std::mt19937_64 engine_;
  std::uint64_t seed_ = 0;
};

}  // namespace aepo
