#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "aepo/entropy.hpp"
#include "aepo/policy.hpp"
#include "aepo/tool_world.hpp"

namespace aepo {

struct RolloutConfig {
  int k = 8;                  // total trajectories per query
  double beta_sens = 0.2;     // pre-monitor sigmoid sensitivity
  double alpha_base = 0.2;    // base branch probability
  double gamma_ent = 0.2;     // entropy coefficient on delta-H
  double lambda_pen = 0.2;    // consecutive-branch penalty slope
  double tau_branch = 0.2;    // branch threshold, strict
  int branch_width = 2;       // Z
  int root_window = 16;       // W, tokens feeding the root entropy
  bool stochastic_branching = false;  // Bernoulli(P_t) ablation mode

  void validate() const;
};

struct BudgetAllocation {
  int k = 0;
  int m = 0;  // global samples
  int b = 0;  // branch budget, k - m
};

struct BranchEvent {
  int chain_id = 0;   // parent chain
  int tool_step = 0;  // tool-step index on the parent
  int width = 0;      // children actually created
  double p_t = 0.0;
};

struct RolloutPool {
  std::vector<Trajectory> trajectories;  // ordered by chain id
  BudgetAllocation allocation;
  std::vector<BranchEvent> events;
  std::vector<EntropyTrace> traces;  // parallel to trajectories
};

/// Policy abstraction used by the rollout engine, so tests can drive the
/// tree with scripted tokens and entropy schedules.
class Actor {
 public:
  struct Sample {
    int token = 0;
    double log_prob = 0.0;
    double entropy = 0.0;
  };
  virtual ~Actor() = default;
  virtual Sample act(const EpisodeState& state, const Task& task,
                     Rng& rng) = 0;
};

class SoftmaxActor final : public Actor {
 public:
  SoftmaxActor(const PolicyParams& params, const StateEncoder& encoder,
               double temperature);
  Sample act(const EpisodeState& state, const Task& task, Rng& rng) override;

 private:
  const PolicyParams* params_;
  const StateEncoder* encoder_;
  double temperature_;
};

/// Actor driven by caller-supplied token/entropy functions. Lets tests and
/// oracle suites script exact tree shapes and entropy schedules.
class ScriptedActor final : public Actor {
 public:
  using TokenFn = std::function<int(const EpisodeState&, const Task&)>;
  using EntropyFn = std::function<double(const EpisodeState&, const Task&)>;
  ScriptedActor(TokenFn token_fn, EntropyFn entropy_fn,
                double log_prob_value = -1.0);
  Sample act(const EpisodeState& state, const Task& task, Rng& rng) override;

 private:
  TokenFn token_fn_;
  EntropyFn entropy_fn_;
  double log_prob_value_;
};

/// m = round(k * sigmoid(beta * (h_root - h_tool_avg))), clamped to
/// [1, k-1]; a probe without tool calls allocates the full budget globally.
BudgetAllocation allocate_budget(double h_root,
                                 std::optional<double> h_tool_avg, int k,
                                 double beta_sens);

/// Generates the probe trajectory and derives the budget split from its
/// entropy trace. The probe is a valid sample and joins the pool as chain 0.
std::pair<BudgetAllocation, Trajectory> premonitor(Actor& actor,
                                                   const Task& task,
                                                   const Environment& env,
                                                   const RolloutConfig& cfg,
                                                   Rng& rng);

/// Eq-style branch probability: clamp(alpha + gamma * dh, 0, 1) scaled by
/// the consecutive-run penalty (1 - min(1, lambda * l)).
double branch_probability(double delta_h, int l, const RolloutConfig& cfg);

enum class BranchAction { Continue, Branch };

/// Deterministic threshold rule: Branch iff p_t > tau (strict).
BranchAction decide_action(double p_t, double tau_branch);

/// Consecutive high-entropy run lengths along a chain: l_before[s] counts
/// the run of delta_h > 0 steps immediately preceding step s; l_after[s]
/// includes step s itself (0 when delta_h[s] <= 0).
std::vector<int> consecutive_run_before(std::span<const double> delta_h);
std::vector<int> consecutive_run_after(std::span<const double> delta_h);

/// Full dynamic entropy-balanced rollout. Returns exactly cfg.k completed
/// trajectories: the probe, m-1 further global chains, branched children,
/// and top-up samples when the branch budget goes unused.
RolloutPool rollout(Actor& actor, const Task& task, const Environment& env,
                    const RolloutConfig& cfg, Rng& rng);

void dump_pool_jsonl(std::ostream& out, const RolloutPool& pool,
                     int pool_index);
void dump_pools_jsonl(const std::filesystem::path& path,
                      std::span<const RolloutPool> pools);

}  // namespace aepo
