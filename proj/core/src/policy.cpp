#include "aepo/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "aepo/errors.hpp"

namespace aepo {

namespace {
constexpr double kProbFloor = 1e-300;
}

PolicyParams::PolicyParams(int vocab_size, int feature_dim)
    : vocab_size_(vocab_size),
      feature_dim_(feature_dim),
      w_(static_cast<std::size_t>(vocab_size) * feature_dim, 0.0) {
  if (vocab_size < 1 || feature_dim < 1) {
    throw ConfigError("policy dimensions must be positive");
  }
}

PolicyParams PolicyParams::random(int vocab_size, int feature_dim,
                                  double scale, Rng& rng) {
  PolicyParams p(vocab_size, feature_dim);
  for (double& w : p.w_) {
    w = scale * (2.0 * rng.next_double() - 1.0);
  }
  return p;
}

void PolicyParams::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out << "aepo-policy v1 V=" << vocab_size_ << " F=" << feature_dim_ << "\n";
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(w_.data()),
            static_cast<std::streamsize>(w_.size() * sizeof(double)));
  if (!out) throw IoError("short write: " + path.string());
}

PolicyParams PolicyParams::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path.string());
  std::string header;
  std::getline(in, header);
  int v = 0, f = 0;
  if (std::sscanf(header.c_str(), "aepo-policy v1 V=%d F=%d", &v, &f) != 2 ||
      v < 1 || f < 1) {
    throw IoError("bad policy header in " + path.string() + ": " + header);
  }
  PolicyParams p(v, f);
  in.read(reinterpret_cast<char*>(p.w_.data()),
          static_cast<std::streamsize>(p.w_.size() * sizeof(double)));
  if (in.gcount() !=
      static_cast<std::streamsize>(p.w_.size() * sizeof(double))) {
    throw IoError("truncated policy file: " + path.string());
  }
  return p;
}

StateEncoder::StateEncoder(const Vocabulary& vocab, int episode_cap,
                           int context_window)
    : vocab_(&vocab),
      episode_cap_(episode_cap),
      context_window_(context_window) {
  if (episode_cap < 1 || context_window < 1) {
    throw ConfigError("encoder requires positive episode cap and window");
  }
  feature_dim_ = context_window_ * vocab.size() + 1 + kNumTokenRoles;
}

StateFeatures StateEncoder::encode(std::span<const int> visible_tokens,
                                   int step_index) const {
  StateFeatures s;
  s.values.assign(static_cast<std::size_t>(feature_dim_), 0.0);
  const int v = vocab_->size();
  const int n = static_cast<int>(visible_tokens.size());
  // Slot w holds the token at offset -(context_window - w) from the cursor;
  // slots before the sequence start stay all-zero.
  for (int w = 0; w < context_window_; ++w) {
    const int pos = n - context_window_ + w;
    if (pos < 0) continue;
    const int tok = visible_tokens[static_cast<std::size_t>(pos)];
    s.values[static_cast<std::size_t>(w) * v + tok] = 1.0;
  }
  const double cap = static_cast<double>(episode_cap_);
  s.values[static_cast<std::size_t>(context_window_) * v] =
      std::min(1.0, static_cast<double>(step_index) / cap);
  const std::size_t role_base =
      static_cast<std::size_t>(context_window_) * v + 1;
  for (int i = 0; i < n; ++i) {
    const auto role = static_cast<std::size_t>(vocab_->role(visible_tokens[i]));
    s.values[role_base + role] += 1.0 / cap;
  }
  for (int r = 0; r < kNumTokenRoles; ++r) {
    s.values[role_base + r] = std::min(1.0, s.values[role_base + r]);
  }
  return s;
}

std::vector<double> logits(const PolicyParams& params,
                           const StateFeatures& state) {
  const int v = params.vocab_size();
  const int f = params.feature_dim();
  if (static_cast<int>(state.values.size()) != f) {
    throw ConfigError("feature dimension mismatch: policy expects " +
                      std::to_string(f) + ", state has " +
                      std::to_string(state.values.size()));
  }
  std::vector<double> z(static_cast<std::size_t>(v), 0.0);
  const double* w = params.data().data();
  for (int i = 0; i < v; ++i) {
    double acc = 0.0;
    const double* row = w + static_cast<std::size_t>(i) * f;
    for (int j = 0; j < f; ++j) acc += row[j] * state.values[j];
    if (!std::isfinite(acc)) {
      throw NumericError("non-finite logit at token " + std::to_string(i));
    }
    z[static_cast<std::size_t>(i)] = acc;
  }
  return z;
}

std::vector<double> softmax(std::span<const double> raw_logits,
                            double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("temperature must be positive");
  }
  double zmax = -std::numeric_limits<double>::infinity();
  for (double z : raw_logits) {
    if (std::isnan(z)) throw NumericError("NaN logit");
    zmax = std::max(zmax, z / temperature);
  }
  std::vector<double> p(raw_logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < raw_logits.size(); ++i) {
    p[i] = std::exp(raw_logits[i] / temperature - zmax);
    sum += p[i];
  }
  for (double& x : p) x = std::max(x / sum, kProbFloor);
  return p;
}

std::vector<double> token_distribution(const PolicyParams& params,
                                       const StateFeatures& state,
                                       double temperature) {
  return softmax(logits(params, state), temperature);
}

double token_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

int sample_token(std::span<const double> probs, Rng& rng) {
  return rng.categorical(probs);
}

double log_prob_from_logits(std::span<const double> raw_logits,
                            double temperature, int token) {
  if (token < 0 || token >= static_cast<int>(raw_logits.size())) {
    throw UsageError("token id out of range in log_prob");
  }
  double zmax = -std::numeric_limits<double>::infinity();
  for (double z : raw_logits) zmax = std::max(zmax, z / temperature);
  double sum = 0.0;
  for (double z : raw_logits) sum += std::exp(z / temperature - zmax);
  return raw_logits[static_cast<std::size_t>(token)] / temperature - zmax -
         std::log(sum);
}

double log_prob(const PolicyParams& params, const StateFeatures& state,
                double temperature, int token) {
  return log_prob_from_logits(logits(params, state), temperature, token);
}

std::vector<double> score_function(const PolicyParams& params,
                                   const StateFeatures& state,
                                   double temperature, int token) {
  const auto p = token_distribution(params, state, temperature);
  const int v = params.vocab_size();
  const int f = params.feature_dim();
  std::vector<double> g(static_cast<std::size_t>(v) * f, 0.0);
  for (int i = 0; i < v; ++i) {
    const double coef =
        ((i == token ? 1.0 : 0.0) - p[static_cast<std::size_t>(i)]) /
        temperature;
    double* row = g.data() + static_cast<std::size_t>(i) * f;
    for (int j = 0; j < f; ++j) row[j] = coef * state.values[j];
  }
  return g;
}

}  // namespace aepo
