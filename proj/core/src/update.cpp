#include "aepo/update.hpp"

#include <algorithm>
#include <cmath>

#include "aepo/errors.hpp"

namespace aepo {

namespace {
constexpr double kRatioCap = 1e6;
}

void ClipConfig::validate() const {
  if (!(eps_low > 0.0 && eps_low < 1.0)) {
    throw ConfigError("eps_low must lie in (0,1)");
  }
  if (!(eps_high > 0.0)) throw ConfigError("eps_high must be positive");
}

std::string rule_name(RuleVariant v) {
  switch (v) {
    case RuleVariant::Aepo: return "aepo";
    case RuleVariant::Grpo: return "grpo";
    case RuleVariant::Dapo: return "dapo";
    case RuleVariant::Cispo: return "cispo";
    case RuleVariant::Gppo: return "gppo";
  }
  return "?";
}

RuleVariant rule_from_name(const std::string& name) {
  if (name == "aepo") return RuleVariant::Aepo;
  if (name == "grpo") return RuleVariant::Grpo;
  if (name == "dapo") return RuleVariant::Dapo;
  if (name == "cispo") return RuleVariant::Cispo;
  if (name == "gppo") return RuleVariant::Gppo;
  throw ConfigError("unknown update rule: " + name);
}

UpdateRule UpdateRule::make(RuleVariant v) {
  UpdateRule r;
  r.variant = v;
  if (v == RuleVariant::Dapo) r.clip.eps_high = 0.28;
  return r;
}

double importance_ratio(double new_log_prob, double old_log_prob,
                        bool* overflow) {
  if (!std::isfinite(new_log_prob) || !std::isfinite(old_log_prob)) {
    throw NumericError("non-finite log-probability in importance ratio");
  }
  if (overflow) *overflow = false;
  const double d = std::exp(new_log_prob - old_log_prob);
  if (d > kRatioCap) {
    if (overflow) *overflow = true;
    return kRatioCap;
  }
  return d;
}

double surrogate_value(double delta, double advantage,
                       const UpdateRule& rule) {
  if (!(delta > 0.0)) throw UsageError("importance ratio must be positive");
  const double lo = 1.0 - rule.clip.eps_low;
  const double hi = 1.0 + rule.clip.eps_high;
  switch (rule.variant) {
    case RuleVariant::Aepo:
    case RuleVariant::Grpo:
    case RuleVariant::Dapo:
      // (1+eps_h)/sg(delta)*delta == 1+eps_h in the forward pass, so the
      // stop-gradient objective evaluates through the plain clip.
      return std::min(delta * advantage,
                      std::clamp(delta, lo, hi) * advantage);
    case RuleVariant::Cispo:
      return std::clamp(delta, lo, hi) * advantage;
    case RuleVariant::Gppo:
      if (advantage < 0.0 && delta < lo) {
        return rule.gppo_beta1 * lo * advantage;
      }
      if (advantage > 0.0 && delta > hi) {
        return rule.gppo_beta2 * hi * advantage;
      }
      return delta * advantage;
  }
  return delta * advantage;
}

double gradient_factor(double delta, double advantage,
                       const UpdateRule& rule) {
  if (!(delta > 0.0)) throw UsageError("importance ratio must be positive");
  const double lo = 1.0 - rule.clip.eps_low;
  const double hi = 1.0 + rule.clip.eps_high;
  switch (rule.variant) {
    case RuleVariant::Aepo:
      if (delta > hi && advantage > 0.0) return hi;
      if (delta < lo && advantage < 0.0) return 0.0;
      return delta;
    case RuleVariant::Grpo:
    case RuleVariant::Dapo:
      if (delta > hi && advantage > 0.0) return 0.0;
      if (delta < lo && advantage < 0.0) return 0.0;
      return delta;
    case RuleVariant::Cispo:
      return std::clamp(delta, lo, hi);
    case RuleVariant::Gppo:
      if (advantage < 0.0 && delta < lo) return rule.gppo_beta1 * lo;
      if (advantage > 0.0 && delta > hi) return rule.gppo_beta2 * hi;
      return delta;
  }
  return delta;
}

TokenUpdateRecord make_token_record(double delta, double advantage,
                                    const UpdateRule& rule) {
  TokenUpdateRecord r;
  r.delta = delta;
  r.advantage = advantage;
  r.factor = gradient_factor(delta, advantage, rule);
  r.clipped = r.factor != delta;
  r.zeroed = r.factor == 0.0;
  return r;
}

void token_gradient(double factor, double advantage,
                    std::span<const double> score, std::span<double> grad) {
  if (score.size() != grad.size()) throw UsageError("gradient shape mismatch");
  const double coef = factor * advantage;
  if (coef == 0.0) return;
  for (std::size_t i = 0; i < score.size(); ++i) grad[i] += coef * score[i];
}

double kl_penalty(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw UsageError("KL dimension mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(kl, 0.0);
}

std::vector<TokenInstance> collect_token_instances(
    std::span<const GroupBatch> batch, const StateEncoder& encoder) {
  std::vector<TokenInstance> out;
  for (const GroupBatch& g : batch) {
    int group_tokens = 0;
    for (const Trajectory& t : g.pool->trajectories) {
      group_tokens += t.unmasked_count();
    }
    const double weight =
        group_tokens == 0
            ? 0.0
            : 1.0 / (static_cast<double>(batch.size()) * group_tokens);
    for (std::size_t ti = 0; ti < g.pool->trajectories.size(); ++ti) {
      const Trajectory& t = g.pool->trajectories[ti];
      std::vector<int> visible = g.task->query;
      for (std::size_t i = 0; i < t.tokens.size(); ++i) {
        if (t.loss_mask[i]) {
          TokenInstance inst;
          inst.features = encoder.encode(visible, static_cast<int>(i));
          inst.token = t.tokens[i];
          inst.old_log_prob = t.old_log_probs[i];
          inst.advantage = g.advantages->reshaped[ti][i];
          inst.entropy = t.entropies[i];
          inst.weight = weight;
          out.push_back(std::move(inst));
        }
        visible.push_back(t.tokens[i]);
      }
    }
  }
  return out;
}

std::vector<double> batch_gradient(const PolicyParams& policy,
                                   std::span<const TokenInstance> tokens,
                                   const UpdateRule& rule, double temperature,
                                   const PolicyParams* reference,
                                   UpdateReport* report) {
  rule.clip.validate();
  if (tokens.empty()) throw UsageError("batch_update on an empty batch");
  const int v = policy.vocab_size();
  const int f = policy.feature_dim();
  std::vector<double> grad(static_cast<std::size_t>(v) * f, 0.0);

  const UpdateRule shadow_aepo = [&] {
    UpdateRule r = rule;
    r.variant = RuleVariant::Aepo;
    return r;
  }();
  const UpdateRule shadow_grpo = [&] {
    UpdateRule r = rule;
    r.variant = RuleVariant::Grpo;
    return r;
  }();

  UpdateReport rep;
  rep.tokens = static_cast<std::int64_t>(tokens.size());
  double loss_sum = 0.0;
  double kl_sum = 0.0;
  double delta_sum = 0.0;
  double entropy_sum = 0.0;
  std::vector<std::tuple<int, double, double>> clipped_records;

  for (const TokenInstance& inst : tokens) {
    const auto z = logits(policy, inst.features);
    const auto p = softmax(z, temperature);
    const double logp = log_prob_from_logits(z, temperature, inst.token);
    bool overflow = false;
    const double delta =
        importance_ratio(logp, inst.old_log_prob, &overflow);
    rep.overflowed += overflow;

    const TokenUpdateRecord rec = make_token_record(delta, inst.advantage, rule);
    loss_sum += surrogate_value(delta, inst.advantage, rule);
    delta_sum += delta;
    rep.max_abs_delta_minus_one =
        std::max(rep.max_abs_delta_minus_one, std::abs(delta - 1.0));
    entropy_sum += inst.entropy;
    rep.clipped += rec.clipped;
    rep.zeroed += rec.zeroed;
    const double hi = 1.0 + rule.clip.eps_high;
    const double lo = 1.0 - rule.clip.eps_low;
    rep.upper_clipped += (delta > hi && inst.advantage > 0.0);
    rep.lower_clipped += (delta < lo && inst.advantage < 0.0);
    rep.zeroed_aepo +=
        gradient_factor(delta, inst.advantage, shadow_aepo) == 0.0;
    rep.zeroed_grpo +=
        gradient_factor(delta, inst.advantage, shadow_grpo) == 0.0;
    if (rec.clipped) {
      clipped_records.emplace_back(inst.token, delta, inst.advantage);
    }

    const double coef = rec.factor * inst.advantage / n;
    if (coef != 0.0) {
      for (int i = 0; i < v; ++i) {
        const double ci =
            coef *
            (((i == inst.token) ? 1.0 : 0.0) - p[static_cast<std::size_t>(i)]) /
            temperature;
        if (ci == 0.0) continue;
        double* row = grad.data() + static_cast<std::size_t>(i) * f;
        const double* feat = inst.features.values.data();
        for (int j = 0; j < f; ++j) row[j] += ci * feat[j];
      }
    }

    if (reference != nullptr && rule.kl_coef > 0.0) {
      const auto q = token_distribution(*reference, inst.features, temperature);
      const double kl = kl_penalty(p, q);
      kl_sum += kl;
      // dKL/dW = (1/temperature) * (p .* r - KL * p) (outer) features,
      // with r = log p - log q; subtracted with weight kl_coef.
      for (int i = 0; i < v; ++i) {
        const double pi = p[static_cast<std::size_t>(i)];
        const double ri =
            std::log(pi) - std::log(q[static_cast<std::size_t>(i)]);
        const double wi = (pi * ri - kl * pi) / temperature;
        const double ci = -rule.kl_coef * wi / n;
        if (ci == 0.0) continue;
        double* row = grad.data() + static_cast<std::size_t>(i) * f;
        const double* feat = inst.features.values.data();
        for (int j = 0; j < f; ++j) row[j] += ci * feat[j];
      }
    }
  }

  rep.loss = loss_sum / n - rule.kl_coef * kl_sum / n;
  rep.kl_value = kl_sum / n;
  rep.mean_delta = delta_sum / n;
  rep.mean_entropy = entropy_sum / n;
  std::sort(clipped_records.begin(), clipped_records.end(),
            [](const auto& a, const auto& b) {
              return std::abs(std::get<1>(a) - 1.0) >
                     std::abs(std::get<1>(b) - 1.0);
            });
  if (clipped_records.size() > 10) clipped_records.resize(10);
  rep.top_clipped = std::move(clipped_records);
  if (report) *report = std::move(rep);
  return grad;
}

std::pair<PolicyParams, UpdateReport> batch_update(
    const PolicyParams& policy, std::span<const GroupBatch> batch,
    const UpdateRule& rule, double learning_rate, const StateEncoder& encoder,
    double temperature, const PolicyParams* reference) {
  const auto tokens = collect_token_instances(batch, encoder);
  UpdateReport report;
  const auto grad =
      batch_gradient(policy, tokens, rule, temperature, reference, &report);
  PolicyParams next = policy;
  auto w = next.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] += learning_rate * grad[i];
  }
  return {std::move(next), std::move(report)};
}

double sg_frozen_batch_loss(const PolicyParams& policy,
                            std::span<const TokenInstance> tokens,
                            std::span<const double> frozen_delta,
                            const UpdateRule& rule, double temperature) {
  if (tokens.size() != frozen_delta.size()) {
    throw UsageError("frozen delta size mismatch");
  }
  const double lo = 1.0 - rule.clip.eps_low;
  const double hi = 1.0 + rule.clip.eps_high;
  double sum = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenInstance& inst = tokens[i];
    const double logp =
        log_prob(policy, inst.features, temperature, inst.token);
    const double delta = std::exp(logp - inst.old_log_prob);
    const double d0 = frozen_delta[i];
    const double a = inst.advantage;
    switch (rule.variant) {
      case RuleVariant::Aepo:
      case RuleVariant::Grpo:
      case RuleVariant::Dapo: {
        // AEPO keeps sg(delta) in the upper clip bound; GRPO/DAPO have no
        // stop-gradient, so their frozen loss is the plain clipped loss.
        const double upper =
            rule.variant == RuleVariant::Aepo ? (hi / d0) * delta : hi;
        const double clipped = std::max(lo, std::min(delta, upper));
        sum += std::min(delta * a, clipped * a);
        break;
      }
      case RuleVariant::Cispo: {
        // sg(clip(delta)) * A * log pi
        sum += std::clamp(d0, lo, hi) * a * logp;
        break;
      }
      case RuleVariant::Gppo: {
        if (a < 0.0 && d0 < lo) {
          sum += rule.gppo_beta1 * (lo / d0) * delta * a;
        } else if (a > 0.0 && d0 > hi) {
          sum += rule.gppo_beta2 * (hi / d0) * delta * a;
        } else {
          sum += delta * a;
        }
        break;
      }
    }
  }
  return sum / static_cast<double>(tokens.size());
}

double raw_batch_loss(const PolicyParams& policy,
                      std::span<const TokenInstance> tokens,
                      const UpdateRule& rule, double temperature) {
  double sum = 0.0;
  for (const TokenInstance& inst : tokens) {
    const double logp =
        log_prob(policy, inst.features, temperature, inst.token);
    const double delta = std::exp(logp - inst.old_log_prob);
    sum += surrogate_value(delta, inst.advantage, rule);
  }
  return sum / static_cast<double>(tokens.size());
}

}  // namespace aepo
