#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "aepo/rng.hpp"
#include "aepo/vocab.hpp"

namespace aepo {

struct DecodingConfig {
  double temperature = 0.6;
  std::uint64_t seed = 0;
};

/// Weight matrix of a linear softmax policy, row-major V x F.
class PolicyParams {
 public:
  PolicyParams(int vocab_size, int feature_dim);

  static PolicyParams random(int vocab_size, int feature_dim, double scale,
                             Rng& rng);

  int vocab_size() const { return vocab_size_; }
  int feature_dim() const { return feature_dim_; }

  double at(int v, int f) const { return w_[idx(v, f)]; }
  double& at(int v, int f) { return w_[idx(v, f)]; }

  std::span<const double> data() const { return w_; }
  std::span<double> data() { return w_; }

  bool operator==(const PolicyParams& other) const = default;

  /// Checkpoint format: one text header line
  ///   aepo-policy v1 V=<int> F=<int>\n
  /// followed by V*F little-endian IEEE-754 doubles, row-major.
  /// Round-trips bit-exactly.
  void save(const std::filesystem::path& path) const;
  static PolicyParams load(const std::filesystem::path& path);

 private:
  std::size_t idx(int v, int f) const {
    return static_cast<std::size_t>(v) * feature_dim_ + f;
  }
  int vocab_size_;
  int feature_dim_;
  std::vector<double> w_;
};

struct StateFeatures {
  std::vector<double> values;
};

/// Deterministic fixed-length encoding of the visible episode prefix:
/// one-hot of the last `context_window` tokens, a normalized step index,
/// and per-role counters normalized by the episode cap.
class StateEncoder {
 public:
  StateEncoder(const Vocabulary& vocab, int episode_cap,
               int context_window = 8);

  int feature_dim() const { return feature_dim_; }
  int context_window() const { return context_window_; }

  StateFeatures encode(std::span<const int> visible_tokens,
                       int step_index) const;

 private:
  const Vocabulary* vocab_;
  int episode_cap_;
  int context_window_;
  int feature_dim_;
};

/// z = W * s. Throws ConfigError on dimension mismatch, NumericError on
/// non-finite output.
std::vector<double> logits(const PolicyParams& params,
                           const StateFeatures& state);

/// Softmax(z / temperature) with max-subtraction; entries floored at 1e-300.
std::vector<double> token_distribution(const PolicyParams& params,
                                       const StateFeatures& state,
                                       double temperature);
std::vector<double> softmax(std::span<const double> raw_logits,
                            double temperature);

/// Shannon entropy in nats; 0*log(0) contributes 0.
double token_entropy(std::span<const double> probs);

int sample_token(std::span<const double> probs, Rng& rng);

/// Log-softmax evaluated at `token`; equals log(token_distribution[token]).
double log_prob(const PolicyParams& params, const StateFeatures& state,
                double temperature, int token);
double log_prob_from_logits(std::span<const double> raw_logits,
                            double temperature, int token);

/// Gradient of log_prob w.r.t. the weight matrix:
///   ((one_hot(token) - p) / temperature) (outer) state.values
/// returned row-major V x F.
std::vector<double> score_function(const PolicyParams& params,
                                   const StateFeatures& state,
                                   double temperature, int token);

}  // namespace aepo
