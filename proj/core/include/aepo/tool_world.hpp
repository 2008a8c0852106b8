#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aepo/rng.hpp"
#include "aepo/vocab.hpp"

namespace aepo {

struct Task {
  std::vector<int> query;
  std::vector<int> answer;
  int depth = 0;
  std::uint64_t seed = 0;
};

/// One completed (or in-flight) generation, excluding the query prefix.
/// Spliced tool-result tokens carry mask=false and zero log-prob/entropy.
struct Trajectory {
  std::vector<int> tokens;
  std::vector<double> old_log_probs;
  std::vector<double> entropies;
  std::vector<std::uint8_t> loss_mask;  // 1 = policy token, 0 = tool result
  std::vector<std::pair<int, int>> tool_spans;  // [start, end) result spans
  double reward = 0.0;

  struct Lineage {
    int parent_id = -1;
    int branch_step = -1;  // tool-step index on the parent
  };
  std::optional<Lineage> lineage;
  std::vector<int> l_snapshots;  // consecutive high-entropy run length per
                                 // tool step, filled by the rollout engine
  int id = 0;

  int size() const { return static_cast<int>(tokens.size()); }
  int unmasked_count() const;
};

/// Two deterministic tools over single-digit operands:
///   CALC(a, b)  -> digit tokens of a + b
///   LOOKUP(key) -> digit token of a fixed seeded key->value table
/// Malformed arguments yield the designated ERR token (still a masked
/// tool-result token).
class ToolRegistry {
 public:
  enum class ToolId { Calc, Lookup };

  ToolRegistry(const Vocabulary& vocab, std::uint64_t table_seed);

  std::vector<int> invoke(ToolId tool, std::span<const int> args) const;

  int lookup_value(int key) const { return table_[static_cast<size_t>(key)]; }

 private:
  const Vocabulary* vocab_;
  std::vector<int> table_;  // digit -> digit
};

enum class StepEvent { None, ToolBoundary, Terminal };

struct PendingCall {
  ToolRegistry::ToolId tool;
  std::vector<int> args;
};

struct EpisodeState {
  std::vector<int> visible;  // query + generated + spliced
  int query_len = 0;
  std::optional<PendingCall> pending;
  int step_index = 0;  // trajectory tokens emitted so far (incl. spliced)
  bool terminal = false;
  bool answering = false;
  int answer_tokens = 0;        // tokens captured since the answer marker
  int expected_answer_len = 0;  // episode ends once the answer completes
  std::vector<std::pair<int, int>> result_spans;  // trajectory-local indices
  Rng failure_rng{0};

  int trajectory_len() const {
    return static_cast<int>(visible.size()) - query_len;
  }
};

struct StepResult {
  StepEvent event = StepEvent::None;
  std::vector<int> spliced;  // tool-result tokens appended by this step
};

class Environment {
 public:
  Environment(const Vocabulary& vocab, const ToolRegistry& tools,
              int episode_cap, double tool_failure_rate = 0.0);

  const Vocabulary& vocab() const { return *vocab_; }
  int episode_cap() const { return episode_cap_; }

  EpisodeState reset(const Task& task) const;

  /// Advances the episode by one policy token. Throws UsageError when the
  /// state is already terminal.
  StepResult step(EpisodeState& state, int token) const;

  /// Rebuilds the episode state reached by a trajectory prefix: policy
  /// tokens are re-stepped, spliced spans are re-produced by the tools.
  EpisodeState replay(const Task& task, const Trajectory& prefix) const;

 private:
  const Vocabulary* vocab_;
  const ToolRegistry* tools_;
  int episode_cap_;
  double tool_failure_rate_;
};

/// Exact-match verifiable reward: 1 iff the tokens following the first
/// ANSWER marker (a trailing END excluded) equal the ground truth.
double reward(const Trajectory& trajectory, const Task& task,
              const Vocabulary& vocab);

/// Extracts the decoded answer span, or nullopt without an answer marker.
std::optional<std::vector<int>> decoded_answer(const Trajectory& trajectory,
                                               const Vocabulary& vocab);

/// Seeded generator for solvable tasks.
/// depth 0: query [a]          answer [a]
/// depth 1: query [k]          answer [T(k)]
/// depth d: query [k, b]       answer digits of (T^(d-1)(k) + b), where the
///          chain v1=T(k), v2=T(v1), ... supplies the CALC operand; b is
///          drawn so the sum stays single-digit.
class TaskGenerator {
 public:
  TaskGenerator(const Vocabulary& vocab, const ToolRegistry& tools,
                std::uint64_t seed);

  Task make(int depth);
  std::vector<Task> make_set(int count, std::span<const int> depths);

 private:
  const Vocabulary* vocab_;
  const ToolRegistry* tools_;
  Rng rng_;
};

/// Scripted optimal player: the next token a perfect agent emits in `state`.
/// Used by solvability checks and scripted rollout tests.
int next_optimal_token(const Task& task, const EpisodeState& state,
                       const Vocabulary& vocab, const ToolRegistry& tools);

void save_tasks_jsonl(const std::filesystem::path& path,
                      std::span<const Task> tasks);
std::vector<Task> load_tasks_jsonl(const std::filesystem::path& path);

}  // namespace aepo
