#include "aepo/rng.hpp"

#include <sstream>

#include "aepo/errors.hpp"

namespace aepo {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words) {
  std::uint64_t state = 0x6a09e667f3bcc908ULL;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t w : words) {
    state ^= w;
    out ^= splitmix64(state);
  }
  return out;
}

Rng::Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::next_double() {
  // 53 high bits -> [0,1). Independent of any distribution implementation.
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int Rng::next_int(int n) {
  // Modulo bias is irrelevant at the ranges used here (n <= a few thousand).
  return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
}

int Rng::categorical(std::span<const double> probs) {
  const double u = next_double();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(mix_seed({seed_, 0x51C0FFEEULL, stream}));
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << seed_ << ' ' << engine_;
  return os.str();
}

Rng Rng::deserialize(const std::string& text) {
  Rng r;
  std::istringstream is(text);
  if (!(is >> r.seed_ >> r.engine_)) {
    throw IoError("invalid rng state string");
  }
  return r;
}

}  // namespace aepo
