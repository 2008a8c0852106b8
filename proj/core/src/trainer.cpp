#include "aepo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "aepo/errors.hpp"

namespace aepo {

namespace {

constexpr int kConsecHistBuckets = 17;  // run lengths 0..15, last = >=16

nlohmann::ordered_json record_to_json(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["mean_reward"] = r.mean_reward;
  j["reward_by_depth"] = r.reward_by_depth;
  j["mean_entropy"] = r.mean_entropy;
  j["loss"] = r.loss;
  j["mean_delta"] = r.mean_delta;
  j["first_mb_max_delta_err"] = r.first_minibatch_max_delta_err;
  j["zeroed_frac"] = r.zeroed_frac;
  j["upper_clip_frac"] = r.upper_clip_frac;
  j["lower_clip_frac"] = r.lower_clip_frac;
  j["zeroed_frac_aepo"] = r.zeroed_frac_aepo;
  j["zeroed_frac_grpo"] = r.zeroed_frac_grpo;
  j["nonzero_grad_aepo"] = r.nonzero_grad_aepo;
  j["nonzero_grad_grpo"] = r.nonzero_grad_grpo;
  j["mean_m"] = r.mean_m;
  j["tool_calls_per_traj"] = r.tool_calls_per_traj;
  j["branch_hist"] = r.branch_hist;
  j["consec_hist"] = r.consec_hist;
  j["pass_at"] = r.pass_at;
  nlohmann::json top = nlohmann::json::array();
  for (const auto& [tok, delta, adv] : r.top_clipped) {
    top.push_back({{"token", tok}, {"delta", delta}, {"adv", adv}});
  }
  j["top_clipped"] = top;
  return j;
}

}  // namespace

std::string MetricsRecord::to_json() const {
  return record_to_json(*this).dump();
}

MetricsRecord MetricsRecord::from_json(const std::string& line, int lineno) {
  try {
    const auto j = nlohmann::json::parse(line);
    MetricsRecord r;
    r.step = j.at("step").get<int>();
    r.mean_reward = j.at("mean_reward").get<double>();
    r.reward_by_depth = j.at("reward_by_depth").get<std::vector<double>>();
    r.mean_entropy = j.at("mean_entropy").get<double>();
    r.loss = j.at("loss").get<double>();
    r.mean_delta = j.at("mean_delta").get<double>();
    r.first_minibatch_max_delta_err =
        j.at("first_mb_max_delta_err").get<double>();
    r.zeroed_frac = j.at("zeroed_frac").get<double>();
    r.upper_clip_frac = j.at("upper_clip_frac").get<double>();
    r.lower_clip_frac = j.at("lower_clip_frac").get<double>();
    r.zeroed_frac_aepo = j.at("zeroed_frac_aepo").get<double>();
    r.zeroed_frac_grpo = j.at("zeroed_frac_grpo").get<double>();
    r.nonzero_grad_aepo = j.at("nonzero_grad_aepo").get<std::int64_t>();
    r.nonzero_grad_grpo = j.at("nonzero_grad_grpo").get<std::int64_t>();
    r.mean_m = j.at("mean_m").get<double>();
    r.tool_calls_per_traj = j.at("tool_calls_per_traj").get<double>();
    r.branch_hist = j.at("branch_hist").get<std::vector<std::int64_t>>();
    r.consec_hist = j.at("consec_hist").get<std::vector<std::int64_t>>();
    r.pass_at = j.at("pass_at").get<std::vector<double>>();
    for (const auto& t : j.at("top_clipped")) {
      r.top_clipped.emplace_back(t.at("token").get<int>(),
                                 t.at("delta").get<double>(),
                                 t.at("adv").get<double>());
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad metrics record: ") + e.what(), lineno);
  }
}

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  policy.save(dir / "policy.bin");
  reference.save(dir / "reference.bin");
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["step"] = step;
  j["seed"] = seed;
  j["rng_state"] = rng_state;
  j["policy"] = "policy.bin";
  j["reference"] = "reference.bin";
  std::ofstream out(dir / "checkpoint.json");
  if (!out) throw IoError("cannot write checkpoint manifest");
  out << j.dump(2) << "\n";
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw IoError("cannot read checkpoint manifest in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad checkpoint manifest: ") + e.what());
  }
  Checkpoint c{PolicyParams::load(dir / j.at("policy").get<std::string>()),
               PolicyParams::load(dir / j.at("reference").get<std::string>()),
               j.at("rng_state").get<std::string>(),
               j.at("step").get<int>(),
               j.at("seed").get<std::uint64_t>()};
  return c;
}

WorldBundle::WorldBundle(const RunConfig& cfg)
    : vocab(Vocabulary::standard(cfg.vocab)),
      tools(vocab, mix_seed({cfg.seed, 0x700B1Eull})),
      env(vocab, tools, cfg.l_max, cfg.tool_failure_rate),
      encoder(vocab, cfg.l_max, cfg.context_window) {
  if (!cfg.task_file.empty()) {
    tasks = load_tasks_jsonl(cfg.task_file);
    if (tasks.empty()) throw ConfigError("task_file holds no tasks");
  } else {
    TaskGenerator gen(vocab, tools, mix_seed({cfg.seed, 0x7A58ull}));
    const auto depths = cfg.depth_cycle();
    tasks = gen.make_set(cfg.task_count, depths);
  }
}

WorldBundle make_world(const RunConfig& cfg) {
  cfg.validate();
  return WorldBundle(cfg);
}

namespace {

struct StepStats {
  double reward_sum = 0.0;
  int traj_count = 0;
  std::vector<double> depth_reward_sum;
  std::vector<int> depth_traj_count;
  double m_sum = 0.0;
  int pool_count = 0;
  double tool_calls = 0.0;
  std::vector<std::int64_t> branch_hist;
  std::vector<std::int64_t> consec_hist;
  std::vector<double> pass_sum;
  int pass_pools = 0;
};

void accumulate_pool(StepStats& st, const RolloutPool& pool, const Task& task,
                     int k) {
  st.pool_count += 1;
  st.m_sum += pool.allocation.m;
  for (const Trajectory& t : pool.trajectories) {
    st.reward_sum += t.reward;
    st.traj_count += 1;
    st.tool_calls += static_cast<double>(t.tool_spans.size());
    const auto d = static_cast<std::size_t>(task.depth);
    if (st.depth_reward_sum.size() <= d) {
      st.depth_reward_sum.resize(d + 1, 0.0);
      st.depth_traj_count.resize(d + 1, 0);
    }
    st.depth_reward_sum[d] += t.reward;
    st.depth_traj_count[d] += 1;
  }
  // Consecutive high-entropy run lengths (maximal runs per trajectory).
  if (st.consec_hist.empty()) st.consec_hist.resize(kConsecHistBuckets, 0);
  for (std::size_t i = 0; i < pool.traces.size(); ++i) {
    const auto& dh = pool.traces[i].delta_h;
    int run = 0;
    for (std::size_t s = 0; s <= dh.size(); ++s) {
      const bool high = s < dh.size() && dh[s] > 0.0;
      if (high) {
        ++run;
      } else if (run > 0) {
        const int bucket = std::min(run, kConsecHistBuckets - 1);
        st.consec_hist[static_cast<std::size_t>(bucket)] += 1;
        run = 0;
      }
    }
  }
  // Branch distribution: distinct chains that received branches.
  if (st.branch_hist.empty()) {
    st.branch_hist.assign(static_cast<std::size_t>(k) + 1, 0);
  }
  std::vector<int> parents;
  for (const BranchEvent& e : pool.events) parents.push_back(e.chain_id);
  std::sort(parents.begin(), parents.end());
  parents.erase(std::unique(parents.begin(), parents.end()), parents.end());
  const auto bucket =
      std::min<std::size_t>(parents.size(), st.branch_hist.size() - 1);
  st.branch_hist[bucket] += 1;
  // Pass@k from the pool's samples.
  int successes = 0;
  for (const Trajectory& t : pool.trajectories) successes += t.reward > 0.5;
  const auto pk = pass_at_k(std::span<const int>(&successes, 1),
                            static_cast<int>(pool.trajectories.size()),
                            static_cast<int>(pool.trajectories.size()));
  if (st.pass_sum.empty()) st.pass_sum.resize(pk.size(), 0.0);
  for (std::size_t i = 0; i < pk.size() && i < st.pass_sum.size(); ++i) {
    st.pass_sum[i] += pk[i];
  }
  st.pass_pools += 1;
}

}  // namespace

std::vector<double> pass_at_k(std::span<const int> successes, int samples,
                              int max_k) {
  if (samples < 1 || max_k < 1) throw UsageError("pass_at_k needs n,k >= 1");
  std::vector<double> out(static_cast<std::size_t>(std::min(max_k, samples)),
                          0.0);
  for (int c : successes) {
    for (int j = 1; j <= static_cast<int>(out.size()); ++j) {
      // 1 - C(n-c, j) / C(n, j), computed as a stable product.
      double miss = 1.0;
      for (int i = 0; i < j; ++i) {
        miss *= static_cast<double>(samples - c - i) /
                static_cast<double>(samples - i);
        if (samples - c - i <= 0) {
          miss = 0.0;
          break;
        }
      }
      out[static_cast<std::size_t>(j - 1)] += 1.0 - miss;
    }
  }
  for (double& x : out) x /= static_cast<double>(successes.size());
  return out;
}

EvalResult evaluate_actor(Actor& actor, const Environment& env,
                          std::span<const Task> tasks, int samples,
                          std::uint64_t seed) {
  if (samples < 1) throw UsageError("evaluate needs samples >= 1");
  std::vector<int> successes;
  successes.reserve(tasks.size());
  double reward_sum = 0.0;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    int c = 0;
    for (int s = 0; s < samples; ++s) {
      Rng rng(mix_seed({seed, 0xE7A1ull, static_cast<std::uint64_t>(ti),
                        static_cast<std::uint64_t>(s)}));
      EpisodeState state = env.reset(tasks[ti]);
      Trajectory traj;
      while (!state.terminal) {
        const Actor::Sample smp = actor.act(state, tasks[ti], rng);
        const StepResult res = env.step(state, smp.token);
        traj.tokens.push_back(smp.token);
        traj.old_log_probs.push_back(smp.log_prob);
        traj.entropies.push_back(smp.entropy);
        traj.loss_mask.push_back(1);
        for (int t : res.spliced) {
          traj.tokens.push_back(t);
          traj.old_log_probs.push_back(0.0);
          traj.entropies.push_back(0.0);
          traj.loss_mask.push_back(0);
        }
      }
      const double r = reward(traj, tasks[ti], env.vocab());
      reward_sum += r;
      c += r > 0.5;
    }
    successes.push_back(c);
  }
  EvalResult res;
  res.pass_at = pass_at_k(successes, samples, samples);
  res.mean_reward =
      reward_sum / (static_cast<double>(tasks.size()) * samples);
  return res;
}

EvalResult evaluate(const PolicyParams& policy, const RunConfig& cfg,
                    std::span<const Task> tasks, int samples) {
  const WorldBundle world = make_world(cfg);
  SoftmaxActor actor(policy, world.encoder, cfg.tau_dec);
  return evaluate_actor(actor, world.env,
                        tasks.empty() ? std::span<const Task>(world.tasks)
                                      : tasks,
                        samples, mix_seed({cfg.seed, 0xEEE7ull}));
}

TrainResult train(const RunConfig& cfg, std::optional<Checkpoint> resume_from,
                  std::ostream* log) {
  cfg.validate();
  WorldBundle world = make_world(cfg);

  PolicyParams policy(cfg.vocab, world.encoder.feature_dim());
  int start_step = 0;
  if (resume_from) {
    if (resume_from->policy.vocab_size() != cfg.vocab ||
        resume_from->policy.feature_dim() != world.encoder.feature_dim()) {
      throw ConfigError("checkpoint dimensions do not match the config");
    }
    policy = resume_from->policy;
    start_step = resume_from->step;
  } else if (cfg.init_scale != 0.0) {
    Rng init_rng(mix_seed({cfg.seed, 0x1417ull}));
    policy = PolicyParams::random(cfg.vocab, world.encoder.feature_dim(),
                                  cfg.init_scale, init_rng);
  }

  const std::filesystem::path run_dir(cfg.out_dir);
  std::filesystem::create_directories(run_dir);
  std::filesystem::create_directories(run_dir / "checkpoints");
  {
    std::ofstream cfg_out(run_dir / "config.txt");
    cfg_out << dump_config(cfg);
  }
  std::ofstream metrics_out(run_dir / "metrics.jsonl",
                            start_step == 0 ? std::ios::trunc
                                            : std::ios::app);
  if (!metrics_out) throw IoError("cannot open metrics.jsonl for write");
  if (cfg.dump_pools) {
    std::filesystem::create_directories(run_dir / "pools");
  }

  TrainResult result{policy, {}, run_dir};

  for (int step = start_step + 1; step <= cfg.steps; ++step) {
    // Algorithm-2 line order: the reference (old) policy refreshes exactly
    // once per outer step, before the rollout phase.
    const PolicyParams old_policy = result.policy;
    SoftmaxActor actor(old_policy, world.encoder, cfg.tau_dec);

    // Sample the query batch.
    Rng batch_rng(mix_seed({cfg.seed, 0xBA7C4ull,
                            static_cast<std::uint64_t>(step)}));
    std::vector<const Task*> batch_tasks;
    batch_tasks.reserve(static_cast<std::size_t>(cfg.batch));
    for (int q = 0; q < cfg.batch; ++q) {
      batch_tasks.push_back(
          &world.tasks[static_cast<std::size_t>(
              batch_rng.next_int(static_cast<int>(world.tasks.size())))]);
    }

    // Rollout phase; queries are independent, so worker threads write
    // disjoint slots and the result is identical to the serial order.
    std::vector<RolloutPool> pools(static_cast<std::size_t>(cfg.batch));
    const auto roll_range = [&](int begin, int end) {
      SoftmaxActor local_actor(old_policy, world.encoder, cfg.tau_dec);
      for (int q = begin; q < end; ++q) {
        Rng rng(mix_seed({cfg.seed, 0x5011ull,
                          static_cast<std::uint64_t>(step),
                          static_cast<std::uint64_t>(q)}));
        pools[static_cast<std::size_t>(q)] =
            rollout(local_actor, *batch_tasks[static_cast<std::size_t>(q)],
                    world.env, cfg.rollout, rng);
      }
    };
    if (cfg.threads <= 1) {
      roll_range(0, cfg.batch);
    } else {
      std::vector<std::thread> workers;
      const int per = (cfg.batch + cfg.threads - 1) / cfg.threads;
      for (int w = 0; w < cfg.threads; ++w) {
        const int begin = w * per;
        const int end = std::min(cfg.batch, begin + per);
        if (begin >= end) break;
        workers.emplace_back(roll_range, begin, end);
      }
      for (auto& t : workers) t.join();
    }

    // Advantage phase.
    std::vector<GroupAdvantages> advs;
    advs.reserve(pools.size());
    for (const RolloutPool& pool : pools) {
      advs.push_back(compute_group_advantages(pool, cfg.a_weight,
                                              cfg.entropy_adv_scope));
    }

    // Update phase: mini-batched gradient ascent against the step's
    // rollout data; the first mini-batch sees delta == 1 exactly.
    StepStats stats;
    for (int q = 0; q < cfg.batch; ++q) {
      accumulate_pool(stats, pools[static_cast<std::size_t>(q)],
                      *batch_tasks[static_cast<std::size_t>(q)],
                      cfg.rollout.k);
    }

    MetricsRecord rec;
    rec.step = step;
    std::int64_t tok_total = 0, zeroed = 0, upper = 0, lower = 0;
    std::int64_t zeroed_aepo = 0, zeroed_grpo = 0;
    double loss_sum = 0.0, delta_sum = 0.0, entropy_sum = 0.0;
    bool first_mb = true;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (int begin = 0; begin < cfg.batch; begin += cfg.minibatch) {
        const int end = std::min(cfg.batch, begin + cfg.minibatch);
        std::vector<GroupBatch> mb;
        for (int q = begin; q < end; ++q) {
          mb.push_back(GroupBatch{batch_tasks[static_cast<std::size_t>(q)],
                                  &pools[static_cast<std::size_t>(q)],
                                  &advs[static_cast<std::size_t>(q)]});
        }
        auto [next, rep] =
            batch_update(result.policy, mb, cfg.rule, cfg.lr, world.encoder,
                         cfg.tau_dec,
                         cfg.rule.kl_coef > 0.0 ? &old_policy : nullptr);
        result.policy = std::move(next);
        if (first_mb) {
          rec.first_minibatch_max_delta_err = rep.max_abs_delta_minus_one;
          first_mb = false;
        }
        tok_total += rep.tokens;
        zeroed += rep.zeroed;
        upper += rep.upper_clipped;
        lower += rep.lower_clipped;
        zeroed_aepo += rep.zeroed_aepo;
        zeroed_grpo += rep.zeroed_grpo;
        loss_sum += rep.loss * static_cast<double>(rep.tokens);
        delta_sum += rep.mean_delta * static_cast<double>(rep.tokens);
        entropy_sum += rep.mean_entropy * static_cast<double>(rep.tokens);
        for (const auto& t : rep.top_clipped) rec.top_clipped.push_back(t);
      }
    }
    std::sort(rec.top_clipped.begin(), rec.top_clipped.end(),
              [](const auto& a, const auto& b) {
                return std::abs(std::get<1>(a) - 1.0) >
                       std::abs(std::get<1>(b) - 1.0);
              });
    if (rec.top_clipped.size() > 10) rec.top_clipped.resize(10);

    rec.mean_reward = stats.reward_sum / std::max(1, stats.traj_count);
    rec.reward_by_depth.assign(stats.depth_reward_sum.size(), -1.0);
    for (std::size_t d = 0; d < stats.depth_reward_sum.size(); ++d) {
      if (stats.depth_traj_count[d] > 0) {
        rec.reward_by_depth[d] =
            stats.depth_reward_sum[d] / stats.depth_traj_count[d];
      }
    }
    const double tok_n = static_cast<double>(std::max<std::int64_t>(1, tok_total));
    rec.mean_entropy = entropy_sum / tok_n;
    rec.loss = loss_sum / tok_n;
    rec.mean_delta = delta_sum / tok_n;
    rec.zeroed_frac = static_cast<double>(zeroed) / tok_n;
    rec.upper_clip_frac = static_cast<double>(upper) / tok_n;
    rec.lower_clip_frac = static_cast<double>(lower) / tok_n;
    rec.zeroed_frac_aepo = static_cast<double>(zeroed_aepo) / tok_n;
    rec.zeroed_frac_grpo = static_cast<double>(zeroed_grpo) / tok_n;
    rec.nonzero_grad_aepo = tok_total - zeroed_aepo;
    rec.nonzero_grad_grpo = tok_total - zeroed_grpo;
    rec.mean_m = stats.m_sum / std::max(1, stats.pool_count);
    rec.tool_calls_per_traj = stats.tool_calls / std::max(1, stats.traj_count);
    rec.branch_hist = stats.branch_hist;
    rec.consec_hist = stats.consec_hist;
    rec.pass_at.assign(stats.pass_sum.size(), 0.0);
    for (std::size_t i = 0; i < stats.pass_sum.size(); ++i) {
      rec.pass_at[i] = stats.pass_sum[i] / std::max(1, stats.pass_pools);
    }

    metrics_out << rec.to_json() << "\n";
    metrics_out.flush();
    result.metrics.push_back(rec);

    if (cfg.dump_pools) {
      std::ostringstream name;
      name << "step_" << step << ".jsonl";
      dump_pools_jsonl(run_dir / "pools" / name.str(), pools);
    }

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      Checkpoint ck{result.policy, old_policy, "", step, cfg.seed};
      std::ostringstream name;
      name << "step_" << step;
      ck.save(run_dir / "checkpoints" / name.str());
    }
    if (log) {
      (*log) << "step " << step << " reward " << rec.mean_reward
             << " entropy " << rec.mean_entropy << "\n";
    }
  }

  Checkpoint final_ck{result.policy, result.policy, "", cfg.steps, cfg.seed};
  final_ck.save(run_dir / "checkpoints" / "final");
  return result;
}

CompareResult compare_rules(const RunConfig& base,
                            std::span<const RuleVariant> rules,
                            std::span<const std::uint64_t> seeds,
                            std::ostream* log) {
  if (rules.size() < 2) throw ConfigError("compare needs at least two rules");
  CompareResult result;
  for (const std::uint64_t seed : seeds) {
    for (const RuleVariant rule : rules) {
      RunConfig cfg = base;
      cfg.seed = seed;
      const double kl = cfg.rule.kl_coef;
      cfg.rule = UpdateRule::make(rule);
      cfg.rule.kl_coef = kl;
      cfg.out_dir = base.out_dir + "/compare_" + rule_name(rule) + "_s" +
                    std::to_string(seed);
      if (log) {
        (*log) << "compare: rule " << rule_name(rule) << " seed " << seed
               << "\n";
      }
      TrainResult tr = train(cfg);
      CompareRun run;
      run.rule = rule;
      run.seed = seed;
      const std::size_t n = tr.metrics.size();
      const std::size_t tail = std::max<std::size_t>(1, n / 10);
      double sum = 0.0;
      for (std::size_t i = n - tail; i < n; ++i) {
        sum += tr.metrics[i].mean_reward;
      }
      run.final_reward = n == 0 ? 0.0 : sum / static_cast<double>(tail);
      for (std::size_t i = 1; i < n; ++i) {
        run.max_entropy_drop =
            std::max(run.max_entropy_drop, tr.metrics[i - 1].mean_entropy -
                                               tr.metrics[i].mean_entropy);
      }
      run.metrics = std::move(tr.metrics);
      result.runs.push_back(std::move(run));
    }
  }

  // Aligned CSV: one row per (seed, step), one column group per rule.
  std::ostringstream csv;
  csv.precision(12);
  csv << "seed,step";
  for (const RuleVariant rule : rules) {
    const std::string rn = rule_name(rule);
    csv << "," << rn << "_reward," << rn << "_entropy," << rn << "_zeroed,"
        << rn << "_nonzero_aepo," << rn << "_nonzero_grpo";
  }
  csv << "\n";
  for (const std::uint64_t seed : seeds) {
    std::vector<const CompareRun*> per_rule;
    for (const RuleVariant rule : rules) {
      for (const CompareRun& run : result.runs) {
        if (run.rule == rule && run.seed == seed) per_rule.push_back(&run);
      }
    }
    const std::size_t steps =
        per_rule.empty() ? 0 : per_rule.front()->metrics.size();
    for (std::size_t s = 0; s < steps; ++s) {
      csv << seed << "," << (s + 1);
      for (const CompareRun* run : per_rule) {
        const MetricsRecord& m = run->metrics[s];
        csv << "," << m.mean_reward << "," << m.mean_entropy << ","
            << m.zeroed_frac << "," << m.nonzero_grad_aepo << ","
            << m.nonzero_grad_grpo;
      }
      csv << "\n";
    }
  }
  result.csv = csv.str();
  return result;
}

}  // namespace aepo
