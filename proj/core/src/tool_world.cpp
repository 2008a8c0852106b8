#include "aepo/tool_world.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "aepo/errors.hpp"

namespace aepo {

int Trajectory::unmasked_count() const {
  int n = 0;
  for (std::uint8_t m : loss_mask) n += (m != 0);
  return n;
}

ToolRegistry::ToolRegistry(const Vocabulary& vocab, std::uint64_t table_seed)
    : vocab_(&vocab) {
  Rng rng(mix_seed({table_seed, 0x7AB1Eull}));
  table_.resize(10);
  for (int k = 0; k < 10; ++k) table_[static_cast<size_t>(k)] = rng.next_int(10);
}

std::vector<int> ToolRegistry::invoke(ToolId tool,
                                      std::span<const int> args) const {
  const auto malformed = [&] { return std::vector<int>{vocab_->error()}; };
  switch (tool) {
    case ToolId::Calc: {
      if (args.size() != 2 || !vocab_->is_digit(args[0]) ||
          !vocab_->is_digit(args[1])) {
        return malformed();
      }
      const int sum =
          vocab_->digit_value(args[0]) + vocab_->digit_value(args[1]);
      std::vector<int> out;
      if (sum >= 10) out.push_back(vocab_->digit(sum / 10));
      out.push_back(vocab_->digit(sum % 10));
      return out;
    }
    case ToolId::Lookup: {
      if (args.size() != 1 || !vocab_->is_digit(args[0])) return malformed();
      return {vocab_->digit(lookup_value(vocab_->digit_value(args[0])))};
    }
  }
  return malformed();
}

Environment::Environment(const Vocabulary& vocab, const ToolRegistry& tools,
                         int episode_cap, double tool_failure_rate)
    : vocab_(&vocab),
      tools_(&tools),
      episode_cap_(episode_cap),
      tool_failure_rate_(tool_failure_rate) {
  if (episode_cap < 1) throw ConfigError("episode cap must be positive");
}

EpisodeState Environment::reset(const Task& task) const {
  EpisodeState s;
  s.visible = task.query;
  s.query_len = static_cast<int>(task.query.size());
  s.expected_answer_len = static_cast<int>(task.answer.size());
  s.failure_rng = Rng(mix_seed({task.seed, 0xFA11ull}));
  return s;
}

StepResult Environment::step(EpisodeState& state, int token) const {
  if (state.terminal) throw UsageError("step() on a terminal episode");
  StepResult res;
  const bool was_answering = state.answering;
  state.visible.push_back(token);
  state.step_index += 1;

  const TokenRole role = vocab_->role(token);
  if (role == TokenRole::End) {
    // END always terminates, even inside an open tool call.
    state.pending.reset();
    state.terminal = true;
    res.event = StepEvent::Terminal;
    return res;
  }
  if (was_answering) state.answer_tokens += 1;

  if (state.pending) {
    if (role == TokenRole::ToolClose) {
      std::vector<int> result =
          tools_->invoke(state.pending->tool, state.pending->args);
      if (tool_failure_rate_ > 0.0 &&
          state.failure_rng.next_double() < tool_failure_rate_) {
        result = {vocab_->error()};
      }
      const int start = state.trajectory_len();
      for (int t : result) state.visible.push_back(t);
      state.step_index += static_cast<int>(result.size());
      if (was_answering) state.answer_tokens += static_cast<int>(result.size());
      state.result_spans.emplace_back(start,
                                      start + static_cast<int>(result.size()));
      state.pending.reset();
      res.event = StepEvent::ToolBoundary;
      res.spliced = std::move(result);
    } else {
      state.pending->args.push_back(token);
    }
  } else if (role == TokenRole::ToolOpen) {
    state.pending = PendingCall{token == vocab_->call_calc()
                                    ? ToolRegistry::ToolId::Calc
                                    : ToolRegistry::ToolId::Lookup,
                                {}};
  } else if (role == TokenRole::AnswerMarker && !state.answering) {
    state.answering = true;
  }

  // The episode ends on END, on a completed answer, or at the length cap.
  if ((state.answering && state.expected_answer_len > 0 &&
       state.answer_tokens >= state.expected_answer_len) ||
      state.trajectory_len() >= episode_cap_) {
    state.terminal = true;
    res.event = StepEvent::Terminal;
  }
  return res;
}

EpisodeState Environment::replay(const Task& task,
                                 const Trajectory& prefix) const {
  EpisodeState state = reset(task);
  int i = 0;
  const int n = prefix.size();
  while (i < n) {
    if (prefix.loss_mask[static_cast<size_t>(i)] == 0) {
      throw UsageError("replay prefix starts inside a tool-result span");
    }
    if (state.terminal) throw UsageError("replay past episode termination");
    StepResult res = step(state, prefix.tokens[static_cast<size_t>(i)]);
    ++i;
    for (int spliced : res.spliced) {
      if (i >= n || prefix.tokens[static_cast<size_t>(i)] != spliced ||
          prefix.loss_mask[static_cast<size_t>(i)] != 0) {
        throw UsageError("replay diverged from recorded tool results");
      }
      ++i;
    }
  }
  return state;
}

std::optional<std::vector<int>> decoded_answer(const Trajectory& trajectory,
                                               const Vocabulary& vocab) {
  const auto& toks = trajectory.tokens;
  const auto it = std::find(toks.begin(), toks.end(), vocab.answer_marker());
  if (it == toks.end()) return std::nullopt;
  auto last = toks.end();
  if (last != it + 1 && *(last - 1) == vocab.end()) --last;
  return std::vector<int>(it + 1, last);
}

double reward(const Trajectory& trajectory, const Task& task,
              const Vocabulary& vocab) {
  const auto ans = decoded_answer(trajectory, vocab);
  if (!ans) return 0.0;
  return *ans == task.answer ? 1.0 : 0.0;
}

TaskGenerator::TaskGenerator(const Vocabulary& vocab,
                             const ToolRegistry& tools, std::uint64_t seed)
    : vocab_(&vocab), tools_(&tools), rng_(mix_seed({seed, 0x7A5Cull})) {}

Task TaskGenerator::make(int depth) {
  if (depth < 0) throw ConfigError("task depth must be >= 0");
  Task t;
  t.depth = depth;
  t.seed = rng_.next_u64();
  if (depth == 0) {
    const int a = rng_.next_int(10);
    t.query = {vocab_->digit(a)};
    t.answer = {vocab_->digit(a)};
    return t;
  }
  const int k = rng_.next_int(10);
  if (depth == 1) {
    t.query = {vocab_->digit(k)};
    t.answer = {vocab_->digit(tools_->lookup_value(k))};
    return t;
  }
  int v = k;
  for (int i = 0; i < depth - 1; ++i) v = tools_->lookup_value(v);
  // Keep the sum single-digit so every answer is one token long.
  const int b = rng_.next_int(10 - v);
  t.query = {vocab_->digit(k), vocab_->digit(b)};
  t.answer = {vocab_->digit(v + b)};
  return t;
}

std::vector<Task> TaskGenerator::make_set(int count,
                                          std::span<const int> depths) {
  if (depths.empty()) throw ConfigError("task depth list is empty");
  std::vector<Task> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(make(depths[static_cast<size_t>(i) % depths.size()]));
  }
  return out;
}

int next_optimal_token(const Task& task, const EpisodeState& state,
                       const Vocabulary& vocab, const ToolRegistry& tools) {
  // Ideal full trajectory (generated + spliced), then index by position.
  struct Tok {
    int id;
    bool generated;
  };
  std::vector<Tok> ideal;
  const auto gen = [&](int id) { ideal.push_back({id, true}); };
  const auto splice = [&](int id) { ideal.push_back({id, false}); };

  if (task.depth >= 1) {
    int cur = vocab.digit_value(task.query[0]);
    const int lookups = task.depth >= 2 ? task.depth - 1 : 1;
    for (int i = 0; i < lookups; ++i) {
      gen(vocab.call_lookup());
      gen(vocab.digit(cur));
      gen(vocab.end_call());
      cur = tools.lookup_value(cur);
      splice(vocab.digit(cur));
    }
    if (task.depth >= 2) {
      const int b = vocab.digit_value(task.query[1]);
      gen(vocab.call_calc());
      gen(vocab.digit(cur));
      gen(vocab.digit(b));
      gen(vocab.end_call());
      const int sum = cur + b;
      if (sum >= 10) splice(vocab.digit(sum / 10));
      splice(vocab.digit(sum % 10));
    }
  }
  gen(vocab.answer_marker());
  for (int d : task.answer) gen(d);
  gen(vocab.end());

  const int pos = state.trajectory_len();
  if (pos < 0 || pos >= static_cast<int>(ideal.size()) ||
      !ideal[static_cast<size_t>(pos)].generated) {
    throw UsageError("optimal player lost track of the episode");
  }
  return ideal[static_cast<size_t>(pos)].id;
}

void save_tasks_jsonl(const std::filesystem::path& path,
                      std::span<const Task> tasks) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path.string());
  for (const Task& t : tasks) {
    nlohmann::ordered_json j;
    j["query"] = t.query;
    j["answer"] = t.answer;
    j["depth"] = t.depth;
    j["seed"] = t.seed;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("short write: " + path.string());
}

std::vector<Task> load_tasks_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for read: " + path.string());
  std::vector<Task> tasks;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      Task t;
      t.query = j.at("query").get<std::vector<int>>();
      t.answer = j.at("answer").get<std::vector<int>>();
      t.depth = j.at("depth").get<int>();
      t.seed = j.at("seed").get<std::uint64_t>();
      tasks.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad task record: ") + e.what(), lineno);
    }
  }
  return tasks;
}

}  // namespace aepo
