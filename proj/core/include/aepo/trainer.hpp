#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aepo/config.hpp"
#include "aepo/rollout.hpp"
#include "aepo/update.hpp"

namespace aepo {

/// One JSONL metrics record per training step. Fixed key set, so the
/// stream is schema-stable across a run.
struct MetricsRecord {
  int step = 0;
  double mean_reward = 0.0;
  std::vector<double> reward_by_depth;  // indexed by task depth, -1 -> NaN
  double mean_entropy = 0.0;
  double loss = 0.0;
  double mean_delta = 0.0;
  double first_minibatch_max_delta_err = 0.0;  // max |delta - 1|, first mb
  double zeroed_frac = 0.0;
  double upper_clip_frac = 0.0;
  double lower_clip_frac = 0.0;
  double zeroed_frac_aepo = 0.0;  // same-batch shadow measurements
  double zeroed_frac_grpo = 0.0;
  std::int64_t nonzero_grad_aepo = 0;
  std::int64_t nonzero_grad_grpo = 0;
  double mean_m = 0.0;  // pre-monitor global allocation
  double tool_calls_per_traj = 0.0;
  std::vector<std::int64_t> branch_hist;  // distinct branched chains per pool
  std::vector<std::int64_t> consec_hist;  // high-entropy run lengths
  std::vector<double> pass_at;            // pass@1..k from the step's pools
  std::vector<std::tuple<int, double, double>> top_clipped;

  std::string to_json() const;
  static MetricsRecord from_json(const std::string& line, int lineno);
};

struct TrainResult {
  PolicyParams policy;
  std::vector<MetricsRecord> metrics;
  std::filesystem::path run_dir;
};

struct Checkpoint {
  PolicyParams policy;
  PolicyParams reference;
  std::string rng_state;
  int step = 0;
  std::uint64_t seed = 0;

  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

/// Runs the full training loop: per step, refresh the reference policy,
/// roll out one pool per query, compute group advantages, apply the
/// mini-batch updates, append metrics. Deterministic given (seed, config);
/// rollout workers parallelize over queries without changing any output.
TrainResult train(const RunConfig& cfg,
                  std::optional<Checkpoint> resume_from = std::nullopt,
                  std::ostream* log = nullptr);

/// Unbiased Pass@1..n from `samples` independent completions per task:
/// pass@j = mean over tasks of 1 - C(n-c, j)/C(n, j).
std::vector<double> pass_at_k(std::span<const int> successes, int samples,
                              int max_k);

struct EvalResult {
  std::vector<double> pass_at;  // pass@1..n
  double mean_reward = 0.0;
};
EvalResult evaluate(const PolicyParams& policy, const RunConfig& cfg,
                    std::span<const Task> tasks, int samples);
EvalResult evaluate_actor(Actor& actor, const Environment& env,
                          std::span<const Task> tasks, int samples,
                          std::uint64_t seed);

/// The run's task set (generator or task_file) and environment pieces,
/// constructed in place so the cross-references between them stay valid.
/// Exposed so evaluate/compare share the exact training setup.
struct WorldBundle {
  explicit WorldBundle(const RunConfig& cfg);
  WorldBundle(const WorldBundle&) = delete;
  WorldBundle& operator=(const WorldBundle&) = delete;

  Vocabulary vocab;
  ToolRegistry tools;
  Environment env;
  StateEncoder encoder;
  std::vector<Task> tasks;
};
WorldBundle make_world(const RunConfig& cfg);

struct CompareRun {
  RuleVariant rule = RuleVariant::Aepo;
  std::uint64_t seed = 0;
  double final_reward = 0.0;  // mean reward over the last tenth of steps
  double max_entropy_drop = 0.0;
  std::vector<MetricsRecord> metrics;
};
struct CompareResult {
  std::vector<CompareRun> runs;
  std::string csv;  // aligned per-step table across rules
};

/// Trains every rule on identical seeds and tasks and tabulates aligned
/// metrics. No files are written unless out_dir is non-empty.
CompareResult compare_rules(const RunConfig& base,
                            std::span<const RuleVariant> rules,
                            std::span<const std::uint64_t> seeds,
                            std::ostream* log = nullptr);

}  // namespace aepo
