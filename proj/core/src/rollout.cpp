#include "aepo/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "aepo/errors.hpp"

namespace aepo {

void RolloutConfig::validate() const {
  if (k < 2) throw ConfigError("rollout budget k must be >= 2");
  if (!(beta_sens > 0.0)) throw ConfigError("beta_sens must be positive");
  const auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!unit(alpha_base) || !unit(gamma_ent) || !unit(lambda_pen) ||
      !unit(tau_branch)) {
    throw ConfigError(
        "alpha_base, gamma_ent, lambda_pen, tau_branch must lie in [0,1]");
  }
  if (branch_width < 1) throw ConfigError("branch width Z must be >= 1");
  if (root_window < 1) throw ConfigError("root window W must be >= 1");
}

SoftmaxActor::SoftmaxActor(const PolicyParams& params,
                           const StateEncoder& encoder, double temperature)
    : params_(&params), encoder_(&encoder), temperature_(temperature) {}

Actor::Sample SoftmaxActor::act(const EpisodeState& state, const Task&,
                                Rng& rng) {
  const StateFeatures feats =
      encoder_->encode(state.visible, state.trajectory_len());
  const auto z = logits(*params_, feats);
  const auto p = softmax(z, temperature_);
  Sample s;
  s.token = sample_token(p, rng);
  s.log_prob = log_prob_from_logits(z, temperature_, s.token);
  s.entropy = token_entropy(p);
  return s;
}

ScriptedActor::ScriptedActor(TokenFn token_fn, EntropyFn entropy_fn,
                             double log_prob_value)
    : token_fn_(std::move(token_fn)),
      entropy_fn_(std::move(entropy_fn)),
      log_prob_value_(log_prob_value) {}

Actor::Sample ScriptedActor::act(const EpisodeState& state, const Task& task,
                                 Rng&) {
  Sample s;
  s.token = token_fn_(state, task);
  s.entropy = entropy_fn_(state, task);
  s.log_prob = log_prob_value_;
  return s;
}

BudgetAllocation allocate_budget(double h_root,
                                 std::optional<double> h_tool_avg, int k,
                                 double beta_sens) {
  BudgetAllocation alloc;
  alloc.k = k;
  if (!h_tool_avg) {
    alloc.m = k;
    alloc.b = 0;
    return alloc;
  }
  const double x = beta_sens * (h_root - *h_tool_avg);
  const double sigma = 1.0 / (1.0 + std::exp(-x));
  const long rounded = std::lround(k * sigma);
  alloc.m = static_cast<int>(std::clamp<long>(rounded, 1, k - 1));
  alloc.b = k - alloc.m;
  return alloc;
}

namespace {

/// Runs one chain to termination, appending to an existing prefix.
/// Per-token log-probs and entropies come from the actor; spliced
/// tool-result tokens are masked with zero bookkeeping values.
Trajectory complete_chain(Actor& actor, const Task& task,
                          const Environment& env, Trajectory prefix, Rng rng) {
  EpisodeState state = prefix.size() == 0 ? env.reset(task)
                                          : env.replay(task, prefix);
  Trajectory traj = std::move(prefix);
  while (!state.terminal) {
    const Actor::Sample s = actor.act(state, task, rng);
    const StepResult res = env.step(state, s.token);
    traj.tokens.push_back(s.token);
    traj.old_log_probs.push_back(s.log_prob);
    traj.entropies.push_back(s.entropy);
    traj.loss_mask.push_back(1);
    if (!res.spliced.empty()) {
      const int start = traj.size();
      for (int t : res.spliced) {
        traj.tokens.push_back(t);
        traj.old_log_probs.push_back(0.0);
        traj.entropies.push_back(0.0);
        traj.loss_mask.push_back(0);
      }
      traj.tool_spans.emplace_back(start,
                                   start + static_cast<int>(res.spliced.size()));
    }
  }
  traj.reward = reward(traj, task, env.vocab());
  return traj;
}

Trajectory prefix_through_tool_step(const Trajectory& parent, int tool_step) {
  const auto span = parent.tool_spans.at(static_cast<size_t>(tool_step));
  Trajectory child;
  const auto end = static_cast<size_t>(span.second);
  child.tokens.assign(parent.tokens.begin(), parent.tokens.begin() + end);
  child.old_log_probs.assign(parent.old_log_probs.begin(),
                             parent.old_log_probs.begin() + end);
  child.entropies.assign(parent.entropies.begin(),
                         parent.entropies.begin() + end);
  child.loss_mask.assign(parent.loss_mask.begin(),
                         parent.loss_mask.begin() + end);
  child.tool_spans.assign(parent.tool_spans.begin(),
                          parent.tool_spans.begin() + tool_step + 1);
  child.lineage = Trajectory::Lineage{parent.id, tool_step};
  return child;
}

}  // namespace

std::pair<BudgetAllocation, Trajectory> premonitor(Actor& actor,
                                                   const Task& task,
                                                   const Environment& env,
                                                   const RolloutConfig& cfg,
                                                   Rng& rng) {
  cfg.validate();
  Trajectory probe = complete_chain(actor, task, env, Trajectory{}, rng);
  const EntropyTrace trace =
      compute_entropy_trace(probe, cfg.root_window, env.vocab().ln_size());
  const std::optional<double> avg =
      trace.has_tools ? std::optional<double>(trace.h_tool_avg) : std::nullopt;
  return {allocate_budget(trace.h_root, avg, cfg.k, cfg.beta_sens), probe};
}

double branch_probability(double delta_h, int l, const RolloutConfig& cfg) {
  const double penalty = std::min(1.0, cfg.lambda_pen * l);
  const double base =
      std::clamp(cfg.alpha_base + cfg.gamma_ent * delta_h, 0.0, 1.0);
  return base * (1.0 - penalty);
}

BranchAction decide_action(double p_t, double tau_branch) {
  return p_t > tau_branch ? BranchAction::Branch : BranchAction::Continue;
}

std::vector<int> consecutive_run_before(std::span<const double> delta_h) {
  std::vector<int> out(delta_h.size(), 0);
  int l = 0;
  for (std::size_t s = 0; s < delta_h.size(); ++s) {
    out[s] = l;
    l = delta_h[s] > 0.0 ? l + 1 : 0;
  }
  return out;
}

std::vector<int> consecutive_run_after(std::span<const double> delta_h) {
  std::vector<int> out(delta_h.size(), 0);
  int l = 0;
  for (std::size_t s = 0; s < delta_h.size(); ++s) {
    l = delta_h[s] > 0.0 ? l + 1 : 0;
    out[s] = l;
  }
  return out;
}

RolloutPool rollout(Actor& actor, const Task& task, const Environment& env,
                    const RolloutConfig& cfg, Rng& rng) {
  cfg.validate();
  const double ln_v = env.vocab().ln_size();

  RolloutPool pool;
  Rng branch_rng = rng.split(0xB4A2C4ull);

  // Phase 1: entropy pre-monitoring. The probe is chain 0.
  Rng probe_rng = rng.split(0);
  auto [alloc, probe] = premonitor(actor, task, env, cfg, probe_rng);
  pool.allocation = alloc;
  probe.id = 0;
  pool.trajectories.push_back(std::move(probe));
  for (int id = 1; id < alloc.m; ++id) {
    Trajectory t =
        complete_chain(actor, task, env, Trajectory{}, rng.split(id));
    t.id = id;
    pool.trajectories.push_back(std::move(t));
  }

  const auto trace_of = [&](const Trajectory& t) {
    return compute_entropy_trace(t, cfg.root_window, ln_v);
  };
  pool.traces.reserve(static_cast<size_t>(cfg.k));
  for (const auto& t : pool.trajectories) pool.traces.push_back(trace_of(t));

  // Phase 2: entropy-balanced beaming. Candidate tool steps are visited
  // round-robin across root lineages so no single lineage can starve the
  // others of branch budget; children enqueue their own later tool steps
  // into their root's queue.
  struct Candidate {
    int chain_id;
    int tool_step;
  };
  std::vector<std::deque<Candidate>> lanes(static_cast<size_t>(alloc.m));
  const auto enqueue_chain = [&](int chain_id, int root, int first_step) {
    const auto& tr = pool.traces[static_cast<size_t>(chain_id)];
    for (int s = first_step; s < static_cast<int>(tr.delta_h.size()); ++s) {
      lanes[static_cast<size_t>(root)].push_back({chain_id, s});
    }
  };
  for (int id = 0; id < alloc.m; ++id) enqueue_chain(id, id, 0);

  int b = alloc.b;
  int next_id = alloc.m;
  std::size_t lane = 0;
  while (b > 0) {
    // Find the next non-empty lane in rotation.
    bool found = false;
    for (std::size_t i = 0; i < lanes.size(); ++i) {
      const std::size_t cand = (lane + i) % lanes.size();
      if (!lanes[cand].empty()) {
        lane = cand;
        found = true;
        break;
      }
    }
    if (!found) break;

    const Candidate c = lanes[lane].front();
    lanes[lane].pop_front();
    const std::size_t root = lane;
    lane = (lane + 1) % lanes.size();

    const auto& trace = pool.traces[static_cast<size_t>(c.chain_id)];
    const auto l_before = consecutive_run_before(trace.delta_h);
    const double dh = trace.delta_h[static_cast<size_t>(c.tool_step)];
    const double p_t =
        branch_probability(dh, l_before[static_cast<size_t>(c.tool_step)], cfg);

    bool fire;
    if (cfg.stochastic_branching) {
      fire = branch_rng.next_double() < p_t;
    } else {
      fire = decide_action(p_t, cfg.tau_branch) == BranchAction::Branch;
    }
    if (!fire) continue;

    const int width = std::min(cfg.branch_width, b);
    if (width <= 0) continue;
    pool.events.push_back({c.chain_id, c.tool_step, width, p_t});
    // Take the shared stem up front: appending children may reallocate the
    // trajectory vector and would invalidate a parent reference.
    const Trajectory stem = prefix_through_tool_step(
        pool.trajectories[static_cast<size_t>(c.chain_id)], c.tool_step);
    for (int z = 0; z < width; ++z) {
      Trajectory child =
          complete_chain(actor, task, env, stem, rng.split(next_id));
      child.id = next_id;
      pool.trajectories.push_back(std::move(child));
      pool.traces.push_back(trace_of(pool.trajectories.back()));
      // The child shares delta_h[0..tool_step] with its parent, so runs of
      // consecutive high-entropy steps carry across the branch point.
      enqueue_chain(next_id, static_cast<int>(root), c.tool_step + 1);
      ++next_id;
    }
    b -= width;
  }

  // Phase 3: top-up sampling when branch budget was left unused.
  while (static_cast<int>(pool.trajectories.size()) < cfg.k) {
    Trajectory t =
        complete_chain(actor, task, env, Trajectory{}, rng.split(next_id));
    t.id = next_id;
    ++next_id;
    pool.trajectories.push_back(std::move(t));
    pool.traces.push_back(trace_of(pool.trajectories.back()));
  }

  // Record consecutive-run snapshots on every trajectory.
  for (std::size_t i = 0; i < pool.trajectories.size(); ++i) {
    pool.trajectories[i].l_snapshots =
        consecutive_run_after(pool.traces[i].delta_h);
  }
  return pool;
}

void dump_pool_jsonl(std::ostream& out, const RolloutPool& pool,
                     int pool_index) {
  for (std::size_t i = 0; i < pool.trajectories.size(); ++i) {
    const Trajectory& t = pool.trajectories[i];
    const EntropyTrace& tr = pool.traces[i];
    nlohmann::ordered_json j;
    j["pool"] = pool_index;
    j["chain"] = t.id;
    if (t.lineage) {
      j["parent"] = t.lineage->parent_id;
      j["branch_step"] = t.lineage->branch_step;
    } else {
      j["parent"] = nullptr;
      j["branch_step"] = nullptr;
    }
    j["tokens"] = t.tokens;
    j["mask"] = t.loss_mask;
    j["spans"] = t.tool_spans;
    j["reward"] = t.reward;
    j["h_root"] = tr.h_root;
    j["h_tool"] = tr.h_tool;
    j["h_tool_avg"] = tr.has_tools ? nlohmann::json(tr.h_tool_avg)
                                   : nlohmann::json(nullptr);
    j["delta_h"] = tr.delta_h;
    j["l_snapshots"] = t.l_snapshots;
    nlohmann::json events = nlohmann::json::array();
    for (const BranchEvent& e : pool.events) {
      if (e.chain_id == t.id) {
        events.push_back({{"step", e.tool_step},
                          {"width", e.width},
                          {"p_t", e.p_t}});
      }
    }
    j["branch_events"] = events;
    j["m"] = pool.allocation.m;
    j["k"] = pool.allocation.k;
    out << j.dump() << "\n";
  }
}

void dump_pools_jsonl(const std::filesystem::path& path,
                      std::span<const RolloutPool> pools) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path.string());
  for (std::size_t i = 0; i < pools.size(); ++i) {
    dump_pool_jsonl(out, pools[i], static_cast<int>(i));
  }
  if (!out) throw IoError("short write: " + path.string());
}

}  // namespace aepo
