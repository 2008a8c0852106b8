#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "aepo/advantage.hpp"
#include "aepo/policy.hpp"
#include "aepo/rollout.hpp"

namespace aepo {

struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.2;

  void validate() const;
};

enum class RuleVariant { Aepo, Grpo, Dapo, Cispo, Gppo };

std::string rule_name(RuleVariant v);
RuleVariant rule_from_name(const std::string& name);

struct UpdateRule {
  RuleVariant variant = RuleVariant::Aepo;
  ClipConfig clip{};
  double gppo_beta1 = 1.0;
  double gppo_beta2 = 1.0;
  double kl_coef = 0.0;

  /// Variant defaults: eps 0.2/0.2 everywhere except DAPO's clip-higher
  /// eps_high = 0.28.
  static UpdateRule make(RuleVariant v);
};

struct TokenUpdateRecord {
  double delta = 1.0;      // importance ratio
  double advantage = 0.0;  // reshaped advantage
  double factor = 1.0;     // gradient factor F
  bool clipped = false;    // F != delta
  bool zeroed = false;     // F == 0
};

/// exp(new - old), capped at 1e6; sets *overflow when the cap engaged.
double importance_ratio(double new_log_prob, double old_log_prob,
                        bool* overflow = nullptr);

/// Per-token forward value of the surrogate objective. AEPO and GRPO share
/// min(delta*A, clip(delta, 1-eps_l, 1+eps_h)*A) — the stop-gradient form
/// (1+eps_h)/sg(delta)*delta equals 1+eps_h in the forward pass, so the two
/// rules are computed through the identical expression. CISPO reports the
/// clipped-weight surrogate; GPPO follows its beta-scaled cases.
double surrogate_value(double delta, double advantage, const UpdateRule& rule);

/// Gradient factor F(delta, A) per rule:
///   AEPO   1+eps_h  if delta > 1+eps_h and A > 0
///          0        if delta < 1-eps_l and A < 0
///          delta    otherwise
///   GRPO / DAPO: 0 in both clipped regions, delta otherwise
///   CISPO  clamp(delta, 1-eps_l, 1+eps_h) regardless of the sign of A
///   GPPO   beta1*(1-eps_l) / beta2*(1+eps_h) in the clipped regions
double gradient_factor(double delta, double advantage, const UpdateRule& rule);

TokenUpdateRecord make_token_record(double delta, double advantage,
                                    const UpdateRule& rule);

/// Accumulates factor * advantage * score into grad (same layout as score).
void token_gradient(double factor, double advantage,
                    std::span<const double> score, std::span<double> grad);

/// Exact categorical KL(p || q) by summation over the vocabulary.
double kl_penalty(std::span<const double> p, std::span<const double> q);

/// One token instance of the batch objective: features of the visible
/// prefix, the sampled token, its frozen rollout-time log-prob, the
/// reshaped advantage, and its loss weight. The objective is the mean over
/// groups of the group-normalized sums, so a token's weight is
/// 1 / (groups * unmasked tokens of its group).
struct TokenInstance {
  StateFeatures features;
  int token = 0;
  double old_log_prob = 0.0;
  double advantage = 0.0;
  double entropy = 0.0;  // rollout-time, for reporting
  double weight = 1.0;
};

struct UpdateReport {
  double loss = 0.0;
  double kl_value = 0.0;
  std::int64_t tokens = 0;
  std::int64_t clipped = 0;
  std::int64_t zeroed = 0;
  std::int64_t upper_clipped = 0;  // delta > 1+eps_h and A > 0
  std::int64_t lower_clipped = 0;  // delta < 1-eps_l and A < 0
  std::int64_t overflowed = 0;
  double mean_delta = 0.0;
  double max_abs_delta_minus_one = 0.0;
  double mean_entropy = 0.0;
  // Same-batch shadow counts under the AEPO and GRPO factor tables; the
  // AEPO zero set is a strict subset of GRPO's, so zeroed_aepo <= zeroed_grpo
  // holds on every batch.
  std::int64_t zeroed_aepo = 0;
  std::int64_t zeroed_grpo = 0;
  std::vector<std::tuple<int, double, double>> top_clipped;  // (token, d, A)
};

/// Builds the flat token-instance list for a set of groups, canonical order:
/// group, then trajectory id, then token index; masked tokens are skipped.
struct GroupBatch {
  const Task* task = nullptr;
  const RolloutPool* pool = nullptr;
  const GroupAdvantages* advantages = nullptr;
};
std::vector<TokenInstance> collect_token_instances(
    std::span<const GroupBatch> batch, const StateEncoder& encoder);

/// Analytic batch gradient of the stop-gradient surrogate:
/// sum_i w_i * F_i * A_i * score_i over unmasked tokens, minus kl_coef
/// times the exact KL gradient against `reference` when provided.
std::vector<double> batch_gradient(const PolicyParams& policy,
                                   std::span<const TokenInstance> tokens,
                                   const UpdateRule& rule, double temperature,
                                   const PolicyParams* reference,
                                   UpdateReport* report);

/// One plain gradient-ascent step over the batch. Returns updated params.
std::pair<PolicyParams, UpdateReport> batch_update(
    const PolicyParams& policy, std::span<const GroupBatch> batch,
    const UpdateRule& rule, double learning_rate, const StateEncoder& encoder,
    double temperature, const PolicyParams* reference = nullptr);

/// Forward batch loss with every sg(.) argument frozen at `frozen_delta`
/// (per token). Finite differences of this function at the freezing point
/// recover the analytic AEPO gradient; the raw (unfrozen) forward loss
/// differentiates to the GRPO gradient instead.
double sg_frozen_batch_loss(const PolicyParams& policy,
                            std::span<const TokenInstance> tokens,
                            std::span<const double> frozen_delta,
                            const UpdateRule& rule, double temperature);
double raw_batch_loss(const PolicyParams& policy,
                      std::span<const TokenInstance> tokens,
                      const UpdateRule& rule, double temperature);

}  // namespace aepo
