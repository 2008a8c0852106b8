#include "aepo/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <sstream>

#include "aepo/advantage.hpp"
#include "aepo/entropy.hpp"
#include "aepo/errors.hpp"
#include "aepo/policy.hpp"
#include "aepo/rollout.hpp"
#include "aepo/tool_world.hpp"
#include "aepo/trainer.hpp"
#include "aepo/update.hpp"

namespace aepo {

namespace {

using Clock = std::chrono::steady_clock;

struct Suite {
  std::string name;
  double tolerance;
  std::function<double(std::string&)> run;  // returns measured error
};

double rel_gap(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// ---------------------------------------------------------------------------
// policy_core oracles
// ---------------------------------------------------------------------------

double check_logits_recompute(std::string&) {
  Rng rng(101);
  double worst = 0.0;
  for (int case_i = 0; case_i < 100; ++case_i) {
    const int v = 4 + rng.next_int(20);
    const int f = 3 + rng.next_int(12);
    PolicyParams params = PolicyParams::random(v, f, 1.5, rng);
    StateFeatures state;
    for (int j = 0; j < f; ++j) {
      state.values.push_back(2.0 * rng.next_double() - 1.0);
    }
    const auto z = logits(params, state);
    for (int i = 0; i < v; ++i) {
      long double acc = 0.0L;
      for (int j = 0; j < f; ++j) {
        acc += static_cast<long double>(params.at(i, j)) * state.values[j];
      }
      worst = std::max(worst,
                       rel_gap(z[static_cast<size_t>(i)],
                               static_cast<double>(acc)));
    }
  }
  return worst;
}

double check_log_prob_precision(std::string&) {
  Rng rng(102);
  double worst = 0.0;
  for (int case_i = 0; case_i < 200; ++case_i) {
    const int v = 4 + rng.next_int(20);
    const int f = 3 + rng.next_int(10);
    const double tau = 0.4 + rng.next_double();
    PolicyParams params = PolicyParams::random(v, f, 2.0, rng);
    StateFeatures state;
    for (int j = 0; j < f; ++j) {
      state.values.push_back(2.0 * rng.next_double() - 1.0);
    }
    const auto z = logits(params, state);
    const auto p = softmax(z, tau);
    const int token = rng.next_int(v);
    const double lp = log_prob(params, state, tau, token);
    // Extended-precision log-softmax.
    long double zmax = -1e300L;
    for (double zi : z) zmax = std::max(zmax, static_cast<long double>(zi / tau));
    long double sum = 0.0L;
    for (double zi : z) sum += std::exp(static_cast<long double>(zi / tau) - zmax);
    const long double ref =
        static_cast<long double>(z[static_cast<size_t>(token)] / tau) - zmax -
        std::log(sum);
    worst = std::max(worst, std::abs(lp - static_cast<double>(ref)));
    // Identity with the distribution entry.
    worst = std::max(worst,
                     std::abs(std::exp(lp) - p[static_cast<size_t>(token)]));
  }
  return worst;
}

double check_sample_frequency(std::string& detail) {
  Rng rng(103);
  const int v = 6;
  PolicyParams params = PolicyParams::random(v, 5, 1.0, rng);
  StateFeatures state;
  for (int j = 0; j < 5; ++j) state.values.push_back(rng.next_double());
  const auto p = token_distribution(params, state, 1.0);
  const int n = 100000;
  std::vector<int> counts(static_cast<size_t>(v), 0);
  Rng draw_rng(104);
  for (int i = 0; i < n; ++i) counts[static_cast<size_t>(sample_token(p, draw_rng))]++;
  double worst_sigma = 0.0;
  for (int i = 0; i < v; ++i) {
    const double freq = static_cast<double>(counts[static_cast<size_t>(i)]) / n;
    const double sigma =
        std::sqrt(p[static_cast<size_t>(i)] * (1.0 - p[static_cast<size_t>(i)]) / n);
    worst_sigma = std::max(worst_sigma,
                           std::abs(freq - p[static_cast<size_t>(i)]) / sigma);
  }
  detail = "worst deviation in binomial sigmas over 1e5 draws";
  return worst_sigma;
}

double check_score_fd(std::string&) {
  Rng rng(105);
  const double h = 1e-5;
  double worst = 0.0;
  for (int case_i = 0; case_i < 100; ++case_i) {
    const int v = 4 + rng.next_int(12);
    const int f = 3 + rng.next_int(7);
    const double tau = 0.5 + rng.next_double();
    PolicyParams params = PolicyParams::random(v, f, 0.8, rng);
    StateFeatures state;
    for (int j = 0; j < f; ++j) {
      state.values.push_back(2.0 * rng.next_double() - 1.0);
    }
    const int token = rng.next_int(v);
    const auto analytic = score_function(params, state, tau, token);
    for (int i = 0; i < v; ++i) {
      for (int j = 0; j < f; ++j) {
        PolicyParams plus = params;
        plus.at(i, j) += h;
        PolicyParams minus = params;
        minus.at(i, j) -= h;
        const double fd = (log_prob(plus, state, tau, token) -
                           log_prob(minus, state, tau, token)) /
                          (2.0 * h);
        const double a = analytic[static_cast<size_t>(i) * f + j];
        worst = std::max(worst, std::abs(fd - a) / (1.0 + std::abs(a)));
      }
    }
  }
  return worst;
}

double check_score_expectation(std::string&) {
  Rng rng(106);
  double worst = 0.0;
  for (int case_i = 0; case_i < 100; ++case_i) {
    const int v = 4 + rng.next_int(12);
    const int f = 3 + rng.next_int(7);
    const double tau = 0.5 + rng.next_double();
    PolicyParams params = PolicyParams::random(v, f, 1.0, rng);
    StateFeatures state;
    for (int j = 0; j < f; ++j) {
      state.values.push_back(2.0 * rng.next_double() - 1.0);
    }
    const auto p = token_distribution(params, state, tau);
    std::vector<double> expectation(static_cast<size_t>(v) * f, 0.0);
    for (int a = 0; a < v; ++a) {
      const auto score = score_function(params, state, tau, a);
      for (std::size_t i = 0; i < expectation.size(); ++i) {
        expectation[i] += p[static_cast<size_t>(a)] * score[i];
      }
    }
    for (double x : expectation) worst = std::max(worst, std::abs(x));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// rollout oracles
// ---------------------------------------------------------------------------

double check_premonitor_allocation(std::string& detail) {
  double worst = 0.0;
  // sigma(0) = 1/2 exactly: m = k/2 for even k.
  for (int k : {2, 4, 8, 16, 32}) {
    const auto alloc = allocate_budget(0.7, 0.7, k, 0.2);
    worst = std::max(worst, static_cast<double>(std::abs(alloc.m - k / 2) +
                                                std::abs(alloc.b - (k - k / 2))));
  }
  // High-precision sigmoid reference for the 0.2/0.6 example.
  {
    const long double x = 0.2L * (0.2L - 0.6L);
    const long double sigma = 1.0L / (1.0L + std::exp(-x));
    const long expect = std::lround(static_cast<double>(16.0L * sigma));
    const auto alloc = allocate_budget(0.2, 0.6, 16, 0.2);
    worst = std::max(worst, std::abs(static_cast<double>(alloc.m - expect)));
  }
  // Monotone nondecreasing in the entropy gap; clamped to [1, k-1].
  const int k = 16;
  int prev = 0;
  bool first = true;
  for (double gap = -30.0; gap <= 30.0; gap += 0.125) {
    const auto alloc = allocate_budget(gap, 0.0, k, 0.4);
    if (!first && alloc.m < prev) worst = std::max(worst, 1.0);
    if (alloc.m < 1 || alloc.m > k - 1) worst = std::max(worst, 1.0);
    prev = alloc.m;
    first = false;
  }
  // Saturation hits the clamp bounds.
  if (allocate_budget(50.0, 0.0, k, 1.0).m != k - 1) worst = std::max(worst, 1.0);
  if (allocate_budget(-50.0, 0.0, k, 1.0).m != 1) worst = std::max(worst, 1.0);
  // No-tool probe.
  if (allocate_budget(0.9, std::nullopt, k, 0.2).m != k) worst = std::max(worst, 1.0);
  detail = "0 = all allocation laws hold";
  return worst;
}

double check_branch_penalty_law(std::string&) {
  RolloutConfig cfg;
  double worst = 0.0;
  // P-hat(l) = 0.2 * l at the default slope.
  for (int l = 0; l <= 5; ++l) {
    const double p = branch_probability(0.0, l, cfg);
    const double expect = cfg.alpha_base * (1.0 - std::min(1.0, 0.2 * l));
    worst = std::max(worst, std::abs(p - expect));
  }
  // Direct evaluation of the quoted example.
  {
    RolloutConfig c;
    const double p = branch_probability(0.5, 2, c);
    worst = std::max(worst, std::abs(p - (0.2 + 0.2 * 0.5) * (1.0 - 0.4)));
  }
  // Strictly decreasing in l until zero, for positive base terms.
  for (double dh : {-0.3, 0.0, 0.4, 1.0}) {
    RolloutConfig c;
    c.lambda_pen = 0.15;
    if (c.alpha_base + c.gamma_ent * dh <= 0.0) continue;
    double prev = branch_probability(dh, 0, c);
    for (int l = 1; l <= 12; ++l) {
      const double p = branch_probability(dh, l, c);
      if (prev > 0.0 && !(p < prev)) worst = std::max(worst, 1.0);
      if (prev == 0.0 && p != 0.0) worst = std::max(worst, 1.0);
      prev = p;
    }
  }
  // Full penalty forces zero regardless of the entropy term.
  if (branch_probability(1.0, 5, cfg) != 0.0) worst = std::max(worst, 1.0);
  // Threshold is strict.
  if (decide_action(0.2, 0.2) != BranchAction::Continue) worst = std::max(worst, 1.0);
  if (decide_action(0.2000001, 0.2) != BranchAction::Branch) worst = std::max(worst, 1.0);
  return worst;
}

double check_budget_conservation(std::string& detail) {
  Rng rng(107);
  double worst = 0.0;
  int branch_events_seen = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int vsize = 16 + rng.next_int(9);
    Vocabulary vocab = Vocabulary::standard(vsize);
    ToolRegistry tools(vocab, rng.next_u64());
    Environment env(vocab, tools, 24);
    StateEncoder encoder(vocab, 24, 4);
    PolicyParams params = PolicyParams::random(
        vsize, encoder.feature_dim(), 0.3 + rng.next_double(), rng);
    SoftmaxActor actor(params, encoder, 0.7 + rng.next_double());
    TaskGenerator gen(vocab, tools, rng.next_u64());
    const Task task = gen.make(rng.next_int(4));

    RolloutConfig cfg;
    cfg.k = 2 + rng.next_int(11);
    cfg.branch_width = 1 + rng.next_int(4);
    cfg.alpha_base = rng.next_double() * 0.6;
    cfg.gamma_ent = rng.next_double() * 0.8;
    cfg.lambda_pen = rng.next_double() * 0.5;
    cfg.tau_branch = 0.05 + rng.next_double() * 0.4;
    cfg.root_window = 2 + rng.next_int(15);

    Rng roll_rng(rng.next_u64());
    const RolloutPool pool = rollout(actor, task, env, cfg, roll_rng);

    if (static_cast<int>(pool.trajectories.size()) != cfg.k) {
      worst = std::max(worst, 1.0);
    }
    int branched = 0;
    for (const BranchEvent& e : pool.events) branched += e.width;
    branch_events_seen += static_cast<int>(pool.events.size());
    const int topups = cfg.k - pool.allocation.m - branched;
    if (topups < 0) worst = std::max(worst, 1.0);
    // Prefix consistency, token for token, for every branched child.
    for (const Trajectory& t : pool.trajectories) {
      if (!t.lineage) continue;
      const Trajectory& parent =
          pool.trajectories[static_cast<size_t>(t.lineage->parent_id)];
      const auto span = parent.tool_spans.at(
          static_cast<size_t>(t.lineage->branch_step));
      for (int i = 0; i < span.second; ++i) {
        if (t.tokens[static_cast<size_t>(i)] !=
            parent.tokens[static_cast<size_t>(i)]) {
          worst = std::max(worst, 1.0);
        }
      }
    }
  }
  detail = "branch events observed: " + std::to_string(branch_events_seen);
  if (branch_events_seen == 0) worst = std::max(worst, 1.0);
  return worst;
}

double check_scripted_branch_schedule(std::string& detail) {
  Vocabulary vocab = Vocabulary::standard(24);
  ToolRegistry tools(vocab, 5);
  Environment env(vocab, tools, 64);
  TaskGenerator gen(vocab, tools, 9);
  double worst = 0.0;

  const auto entropy_schedule = [&](double root_h, double tool_h) {
    return [root_h, tool_h](const EpisodeState& s, const Task&) {
      return s.result_spans.empty() ? root_h : tool_h;
    };
  };
  const auto optimal_tokens = [&](const EpisodeState& s, const Task& t) {
    return next_optimal_token(t, s, vocab, tools);
  };

  {
    // Degenerate schedule: no entropy rise, so no branch events and the
    // pool is filled by global samples plus top-ups.
    const Task task = gen.make(1);
    ScriptedActor actor(optimal_tokens, entropy_schedule(0.5, 0.5));
    RolloutConfig cfg;
    cfg.k = 8;
    Rng rng(11);
    const RolloutPool pool = rollout(actor, task, env, cfg, rng);
    if (!pool.events.empty()) worst = std::max(worst, 1.0);
    if (static_cast<int>(pool.trajectories.size()) != cfg.k) {
      worst = std::max(worst, 1.0);
    }
  }

  {
    // High post-tool entropy forces one Branch(Z = k - m) on chain 0's
    // first tool step; the branch budget is consumed in a single event.
    const Task task = gen.make(1);
    ScriptedActor actor(optimal_tokens, entropy_schedule(0.1, 3.0));
    RolloutConfig cfg;
    cfg.k = 8;
    const auto alloc =
        allocate_budget(0.1, 3.0, cfg.k, cfg.beta_sens);
    cfg.branch_width = alloc.b;
    Rng rng(12);
    const RolloutPool pool = rollout(actor, task, env, cfg, rng);
    if (pool.allocation.m != alloc.m) worst = std::max(worst, 1.0);
    if (pool.events.size() != 1) worst = std::max(worst, 1.0);
    if (!pool.events.empty()) {
      const BranchEvent& e = pool.events.front();
      if (e.chain_id != 0 || e.tool_step != 0 || e.width != alloc.b) {
        worst = std::max(worst, 1.0);
      }
    }
    int children_of_chain0 = 0;
    for (const Trajectory& t : pool.trajectories) {
      if (t.lineage && t.lineage->parent_id == 0) ++children_of_chain0;
    }
    if (children_of_chain0 != alloc.b) worst = std::max(worst, 1.0);
    detail = "forced branch width " + std::to_string(alloc.b);
  }

  {
    // Anti-collapse: several all-high-entropy chains with Z <= ceil(b/2)
    // must spread branches over at least two root lineages.
    const Task task = gen.make(3);
    ScriptedActor actor(optimal_tokens, entropy_schedule(0.1, 3.0));
    RolloutConfig cfg;
    cfg.k = 8;
    cfg.branch_width = 2;
    Rng rng(13);
    const RolloutPool pool = rollout(actor, task, env, cfg, rng);
    std::vector<int> parents;
    for (const BranchEvent& e : pool.events) parents.push_back(e.chain_id);
    std::sort(parents.begin(), parents.end());
    parents.erase(std::unique(parents.begin(), parents.end()), parents.end());
    if (parents.size() < 2) worst = std::max(worst, 1.0);
  }
  return worst;
}

double check_rollout_reproducibility(std::string&) {
  Vocabulary vocab = Vocabulary::standard(24);
  ToolRegistry tools(vocab, 21);
  Environment env(vocab, tools, 40);
  StateEncoder encoder(vocab, 40, 8);
  Rng init(31);
  PolicyParams params =
      PolicyParams::random(24, encoder.feature_dim(), 0.6, init);
  SoftmaxActor actor_a(params, encoder, 0.6);
  SoftmaxActor actor_b(params, encoder, 0.6);
  TaskGenerator gen(vocab, tools, 22);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Task task = gen.make(trial % 3);
    RolloutConfig cfg;
    cfg.k = 6;
    Rng ra(1000 + static_cast<std::uint64_t>(trial));
    Rng rb(1000 + static_cast<std::uint64_t>(trial));
    const RolloutPool a = rollout(actor_a, task, env, cfg, ra);
    const RolloutPool b = rollout(actor_b, task, env, cfg, rb);
    if (a.trajectories.size() != b.trajectories.size()) {
      worst = std::max(worst, 1.0);
      continue;
    }
    for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
      if (a.trajectories[i].tokens != b.trajectories[i].tokens ||
          a.trajectories[i].old_log_probs != b.trajectories[i].old_log_probs ||
          a.trajectories[i].reward != b.trajectories[i].reward) {
        worst = std::max(worst, 1.0);
      }
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// advantage oracles
// ---------------------------------------------------------------------------

double check_advantage_normalization(std::string&) {
  Rng rng(108);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int g = 2 + rng.next_int(10);
    std::vector<double> rewards;
    for (int i = 0; i < g; ++i) {
      rewards.push_back(rng.next_double() < 0.5 ? 0.0 : 1.0);
    }
    const auto acc = accuracy_advantage(rewards);
    double sum = 0.0;
    for (double a : acc) sum += a;
    worst = std::max(worst, std::abs(sum));
    // Two-pass mean/std reference.
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= g;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double stddev = std::sqrt(var / g);
    if (stddev > 0.0) {
      for (int i = 0; i < g; ++i) {
        worst = std::max(worst, std::abs(acc[static_cast<size_t>(i)] -
                                         (rewards[static_cast<size_t>(i)] - mean) /
                                             stddev));
      }
    } else {
      for (double a : acc) worst = std::max(worst, std::abs(a));
    }
  }
  // Entropy advantage: zero mean, unit variance over unmasked tokens.
  for (int trial = 0; trial < 50; ++trial) {
    Trajectory t;
    const int n = 4 + rng.next_int(40);
    for (int i = 0; i < n; ++i) {
      t.tokens.push_back(0);
      t.entropies.push_back(rng.next_double() * 3.0);
      t.old_log_probs.push_back(-1.0);
      t.loss_mask.push_back(rng.next_double() < 0.8 ? 1 : 0);
    }
    int unmasked = 0;
    for (auto m : t.loss_mask) unmasked += m;
    if (unmasked < 2) continue;
    const auto ent = entropy_advantage(t);
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < ent.size(); ++i) {
      if (t.loss_mask[i]) mean += ent[i];
    }
    mean /= unmasked;
    for (std::size_t i = 0; i < ent.size(); ++i) {
      if (t.loss_mask[i]) var += (ent[i] - mean) * (ent[i] - mean);
    }
    var /= unmasked;
    worst = std::max(worst, std::abs(mean));
    worst = std::max(worst, std::abs(var - 1.0));
    // Masked tokens carry zero entropy advantage.
    for (std::size_t i = 0; i < ent.size(); ++i) {
      if (!t.loss_mask[i] && ent[i] != 0.0) worst = std::max(worst, 1.0);
    }
  }
  // a = 0 recovers the accuracy advantage bitwise; sign preservation.
  for (int trial = 0; trial < 1000; ++trial) {
    const double acc = 4.0 * rng.next_double() - 2.0;
    const double ent = 6.0 * rng.next_double() - 3.0;
    const double a0[] = {acc};
    const double e0[] = {ent};
    const auto same = reshape_advantage(a0, e0, 0.0);
    if (same[0] != acc) worst = std::max(worst, 1.0);
    const double a = 0.2;
    const auto shaped = reshape_advantage(a0, e0, a);
    if (std::abs(a * ent) < 1.0 && acc != 0.0) {
      if (std::signbit(shaped[0]) != std::signbit(acc) || shaped[0] == 0.0) {
        worst = std::max(worst, 1.0);
      }
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// update-rule oracles
// ---------------------------------------------------------------------------

double check_forward_invariance(std::string& detail) {
  Rng rng(109);
  const UpdateRule aepo = UpdateRule::make(RuleVariant::Aepo);
  const UpdateRule grpo = UpdateRule::make(RuleVariant::Grpo);
  double worst = 0.0;
  const auto t0 = Clock::now();
  for (int i = 0; i < 10000; ++i) {
    const double delta = 5.0 * rng.next_double() + 1e-12;
    const double adv = 6.0 * rng.next_double() - 3.0;
    const double va = surrogate_value(delta, adv, aepo);
    const double vg = surrogate_value(delta, adv, grpo);
    worst = std::max(worst, std::abs(va - vg));
  }
  const double secs =
      std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream os;
  os << "10^4 pairs, zero tolerance, " << secs << " s";
  detail = os.str();
  return worst;
}

double check_gradient_factor_tables(std::string&) {
  double worst = 0.0;
  const UpdateRule aepo = UpdateRule::make(RuleVariant::Aepo);
  const UpdateRule grpo = UpdateRule::make(RuleVariant::Grpo);
  const UpdateRule dapo = UpdateRule::make(RuleVariant::Dapo);
  const UpdateRule cispo = UpdateRule::make(RuleVariant::Cispo);
  UpdateRule gppo = UpdateRule::make(RuleVariant::Gppo);

  const auto expect = [&](double got, double want) {
    if (got != want) worst = std::max(worst, std::abs(got - want));
  };

  // Boundary-straddling inputs around both clip edges, both signs.
  const double eps = 1e-6;
  for (const UpdateRule* rule : std::initializer_list<const UpdateRule*>{
           &aepo, &grpo, &dapo, &cispo, &gppo}) {
    const double lo = 1.0 - rule->clip.eps_low;
    const double hi = 1.0 + rule->clip.eps_high;
    for (double adv : {1.0, -1.0}) {
      for (double delta : {lo - eps, lo + eps, hi - eps, hi + eps}) {
        const double f = gradient_factor(delta, adv, *rule);
        double want = delta;
        switch (rule->variant) {
          case RuleVariant::Aepo:
            if (delta > hi && adv > 0.0) want = hi;
            else if (delta < lo && adv < 0.0) want = 0.0;
            break;
          case RuleVariant::Grpo:
          case RuleVariant::Dapo:
            if ((delta > hi && adv > 0.0) || (delta < lo && adv < 0.0)) want = 0.0;
            break;
          case RuleVariant::Cispo:
            want = std::clamp(delta, lo, hi);
            break;
          case RuleVariant::Gppo:
            if (adv < 0.0 && delta < lo) want = rule->gppo_beta1 * lo;
            else if (adv > 0.0 && delta > hi) want = rule->gppo_beta2 * hi;
            break;
        }
        expect(f, want);
      }
    }
  }

  // Worked cases from the factor tables.
  expect(gradient_factor(1.5, 1.0, aepo), 1.0 + aepo.clip.eps_high);
  expect(gradient_factor(0.5, -1.0, aepo), 0.0);
  expect(gradient_factor(1.5, 1.0, grpo), 0.0);
  expect(gradient_factor(0.5, -1.0, cispo), 1.0 - cispo.clip.eps_low);
  expect(gradient_factor(0.5, -1.0, gppo), 1.0 * (1.0 - gppo.clip.eps_low));
  gppo.gppo_beta1 = 0.5;
  expect(gradient_factor(0.5, -1.0, gppo), 0.5 * (1.0 - gppo.clip.eps_low));
  gppo.gppo_beta1 = 1.0;

  // All five rules agree on F = delta in the unclipped band.
  for (double delta = 0.85; delta < 1.15; delta += 0.01) {
    for (double adv : {-1.0, 1.0}) {
      for (const UpdateRule* rule : std::initializer_list<const UpdateRule*>{
               &aepo, &grpo, &cispo, &gppo}) {
        expect(gradient_factor(delta, adv, *rule), delta);
      }
    }
  }

  // Continuity of AEPO at the upper bound for positive advantages; GRPO
  // jumps there.
  {
    const double hi = 1.0 + aepo.clip.eps_high;
    const double below = gradient_factor(hi * (1.0 - 1e-9), 1.0, aepo);
    const double above = gradient_factor(hi * (1.0 + 1e-9), 1.0, aepo);
    if (std::abs(below - above) > 1e-6) worst = std::max(worst, 1.0);
    const double g_below = gradient_factor(hi * (1.0 - 1e-9), 1.0, grpo);
    const double g_above = gradient_factor(hi * (1.0 + 1e-9), 1.0, grpo);
    if (std::abs(g_below - g_above) < 1.0) worst = std::max(worst, 1.0);
  }

  // Zero-set containment: AEPO zeroes strictly fewer configurations.
  Rng rng(110);
  bool strict_seen = false;
  for (int i = 0; i < 20000; ++i) {
    const double delta = 5.0 * rng.next_double() + 1e-9;
    const double adv = 6.0 * rng.next_double() - 3.0;
    const bool za = gradient_factor(delta, adv, aepo) == 0.0;
    const bool zg = gradient_factor(delta, adv, grpo) == 0.0;
    if (za && !zg) worst = std::max(worst, 1.0);
    if (zg && !za) strict_seen = true;
  }
  if (!strict_seen) worst = std::max(worst, 1.0);
  return worst;
}

double check_kl_properties(std::string&) {
  double worst = 0.0;
  const std::vector<double> p{0.75, 0.25};
  const std::vector<double> q{0.25, 0.75};
  worst = std::max(worst, std::abs(kl_penalty(p, q) - 0.5 * std::log(3.0)));
  worst = std::max(worst, std::abs(kl_penalty(p, p)));
  Rng rng(111);
  for (int trial = 0; trial < 1000; ++trial) {
    const int v = 2 + rng.next_int(12);
    std::vector<double> a(static_cast<size_t>(v)), b(static_cast<size_t>(v));
    double sa = 0.0, sb = 0.0;
    for (int i = 0; i < v; ++i) {
      a[static_cast<size_t>(i)] = rng.next_double() + 1e-6;
      b[static_cast<size_t>(i)] = rng.next_double() + 1e-6;
      sa += a[static_cast<size_t>(i)];
      sb += b[static_cast<size_t>(i)];
    }
    for (int i = 0; i < v; ++i) {
      a[static_cast<size_t>(i)] /= sa;
      b[static_cast<size_t>(i)] /= sb;
    }
    const double kl = kl_penalty(a, b);
    if (kl < 0.0) worst = std::max(worst, -kl);
  }
  return worst;
}

double check_importance_ratio_precision(std::string&) {
  Rng rng(112);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = 20.0 * rng.next_double() - 10.0;
    const double b = 20.0 * rng.next_double() - 10.0;
    const double got = importance_ratio(a, b);
    const long double ref = std::exp(static_cast<long double>(a) - b);
    if (ref <= 1e6L) {
      worst = std::max(
          worst, static_cast<double>(std::abs(got - static_cast<double>(ref)) /
                                     static_cast<double>(ref)));
    }
  }
  bool overflow = false;
  const double capped = importance_ratio(20.0, 0.0, &overflow);
  if (!overflow || capped != 1e6) worst = std::max(worst, 1.0);
  return worst;
}

// Synthetic token batches spanning every clip region.
struct SyntheticBatch {
  PolicyParams params;
  std::vector<TokenInstance> tokens;
  std::vector<double> frozen_delta;
};

SyntheticBatch make_synthetic_batch(Rng& rng, int v, int f, int n,
                                    double tau) {
  SyntheticBatch batch{PolicyParams::random(v, f, 0.5, rng), {}, {}};
  for (int t = 0; t < n; ++t) {
    TokenInstance inst;
    for (int j = 0; j < f; ++j) {
      inst.features.values.push_back(2.0 * rng.next_double() - 1.0);
    }
    inst.token = rng.next_int(v);
    double target;
    // Cover below-band, in-band and above-band ratios, keeping a margin
    // from the clip edges so finite differences stay one-sided.
    switch (t % 3) {
      case 0: target = 0.30 + 0.45 * rng.next_double(); break;
      case 1: target = 0.85 + 0.30 * rng.next_double(); break;
      default: target = 1.30 + 1.70 * rng.next_double(); break;
    }
    inst.advantage = (rng.next_double() < 0.5 ? -1.0 : 1.0) *
                     (0.5 + 1.5 * rng.next_double());
    if (t == 0) {
      // Guarantee the stop-gradient-sensitive region is populated.
      target = 1.6;
      inst.advantage = 1.0;
    }
    if (t == 1) {
      target = 0.5;
      inst.advantage = -1.0;
    }
    const double logp =
        log_prob(batch.params, inst.features, tau, inst.token);
    inst.old_log_prob = logp - std::log(target);
    inst.entropy = 1.0;
    batch.tokens.push_back(std::move(inst));
  }
  for (const TokenInstance& inst : batch.tokens) {
    const double logp =
        log_prob(batch.params, inst.features, tau, inst.token);
    batch.frozen_delta.push_back(std::exp(logp - inst.old_log_prob));
  }
  return batch;
}

double fd_gradient_gap(const SyntheticBatch& batch, const UpdateRule& rule,
                       double tau, bool frozen,
                       std::span<const double> analytic) {
  const double h = 1e-5;
  double worst = 0.0;
  PolicyParams theta = batch.params;
  const int v = theta.vocab_size();
  const int f = theta.feature_dim();
  for (int i = 0; i < v; ++i) {
    for (int j = 0; j < f; ++j) {
      const double saved = theta.at(i, j);
      theta.at(i, j) = saved + h;
      const double up =
          frozen ? sg_frozen_batch_loss(theta, batch.tokens,
                                        batch.frozen_delta, rule, tau)
                 : raw_batch_loss(theta, batch.tokens, rule, tau);
      theta.at(i, j) = saved - h;
      const double down =
          frozen ? sg_frozen_batch_loss(theta, batch.tokens,
                                        batch.frozen_delta, rule, tau)
                 : raw_batch_loss(theta, batch.tokens, rule, tau);
      theta.at(i, j) = saved;
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic[static_cast<size_t>(i) * f + j];
      worst = std::max(worst, std::abs(fd - a) / (1.0 + std::abs(a)));
    }
  }
  return worst;
}

double check_sg_frozen_gradient(std::string& detail, bool mutate) {
  Rng rng(113);
  const double tau = 0.8;
  UpdateRule rule = UpdateRule::make(RuleVariant::Aepo);
  double worst = 0.0;
  const auto t0 = Clock::now();
  for (int b = 0; b < 100; ++b) {
    SyntheticBatch batch = make_synthetic_batch(rng, 6, 8, 24, tau);
    UpdateRule analytic_rule = rule;
    if (mutate) {
      // Corrupted factor table: zeroed/rescaled regions disagree with the
      // stop-gradient objective, so the check must fail.
      analytic_rule.variant = RuleVariant::Cispo;
    }
    const auto grad = batch_gradient(batch.params, batch.tokens,
                                     analytic_rule, tau, nullptr, nullptr);
    worst = std::max(worst,
                     fd_gradient_gap(batch, rule, tau, /*frozen=*/true, grad));
  }
  const double secs =
      std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream os;
  os << "100 batches, " << secs << " s";
  detail = os.str();
  return worst;
}

double check_plain_fd_grpo(std::string& detail) {
  Rng rng(114);
  const double tau = 0.8;
  const UpdateRule aepo = UpdateRule::make(RuleVariant::Aepo);
  const UpdateRule grpo = UpdateRule::make(RuleVariant::Grpo);
  double worst = 0.0;
  double max_aepo_gap = 0.0;
  for (int b = 0; b < 40; ++b) {
    SyntheticBatch batch = make_synthetic_batch(rng, 6, 8, 24, tau);
    const auto grpo_grad =
        batch_gradient(batch.params, batch.tokens, grpo, tau, nullptr, nullptr);
    // Plain finite differences of the raw clipped loss recover GRPO.
    worst = std::max(worst, fd_gradient_gap(batch, aepo, tau, /*frozen=*/false,
                                            grpo_grad));
    // And must NOT recover the AEPO gradient (the batches contain tokens
    // in the upper-clip region where the two rules differ).
    const auto aepo_grad =
        batch_gradient(batch.params, batch.tokens, aepo, tau, nullptr, nullptr);
    double gap = 0.0;
    for (std::size_t i = 0; i < aepo_grad.size(); ++i) {
      gap = std::max(gap, std::abs(aepo_grad[i] - grpo_grad[i]));
    }
    max_aepo_gap = std::max(max_aepo_gap, gap);
  }
  std::ostringstream os;
  os << "AEPO-vs-GRPO analytic gap " << max_aepo_gap
     << " (must exceed 1e-3)";
  detail = os.str();
  if (max_aepo_gap < 1e-3) worst = std::max(worst, 1.0);
  return worst;
}

// ---------------------------------------------------------------------------
// tool-world and trainer oracles
// ---------------------------------------------------------------------------

double check_tool_world_solvability(std::string& detail) {
  double worst = 0.0;
  // Scripted optimal player earns reward 1 across depths and seeds.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Vocabulary vocab = Vocabulary::standard(24);
    ToolRegistry tools(vocab, seed);
    Environment env(vocab, tools, 64);
    TaskGenerator gen(vocab, tools, seed);
    for (int depth = 0; depth <= 3; ++depth) {
      const Task task = gen.make(depth);
      EpisodeState state = env.reset(task);
      Trajectory traj;
      while (!state.terminal) {
        const int tok = next_optimal_token(task, state, vocab, tools);
        const StepResult res = env.step(state, tok);
        traj.tokens.push_back(tok);
        traj.loss_mask.push_back(1);
        if (!res.spliced.empty()) {
          const int start = traj.size();
          for (int s : res.spliced) {
            traj.tokens.push_back(s);
            traj.loss_mask.push_back(0);
          }
          traj.tool_spans.emplace_back(
              start, start + static_cast<int>(res.spliced.size()));
        }
      }
      if (reward(traj, task, vocab) != 1.0) worst = std::max(worst, 1.0);
      if (static_cast<int>(traj.tool_spans.size()) != task.depth) {
        worst = std::max(worst, 1.0);
      }
    }
  }
  // Exhaustive existence search at tiny scale: depth-1 tasks, V = 16,
  // cap 12, iterative deepening over policy-token sequences.
  Vocabulary vocab = Vocabulary::standard(16);
  ToolRegistry tools(vocab, 3);
  Environment env(vocab, tools, 12);
  TaskGenerator gen(vocab, tools, 4);
  int found_at_total = 0;
  for (int t = 0; t < 5; ++t) {
    const Task task = gen.make(1);
    bool found = false;
    for (int limit = 1; limit <= 8 && !found; ++limit) {
      std::function<bool(EpisodeState&, std::vector<int>&, int)> dfs =
          [&](EpisodeState& state, std::vector<int>& traj_tokens,
              int gen_left) -> bool {
        if (state.terminal) {
          Trajectory traj;
          traj.tokens = traj_tokens;
          traj.loss_mask.assign(traj_tokens.size(), 1);
          return reward(traj, task, vocab) == 1.0;
        }
        if (gen_left == 0) return false;
        for (int tok = 0; tok < vocab.size(); ++tok) {
          EpisodeState next = state;
          std::vector<int> next_tokens = traj_tokens;
          const StepResult res = env.step(next, tok);
          next_tokens.push_back(tok);
          for (int s : res.spliced) next_tokens.push_back(s);
          if (dfs(next, next_tokens, gen_left - 1)) return true;
        }
        return false;
      };
      EpisodeState root = env.reset(task);
      std::vector<int> tokens;
      found = dfs(root, tokens, limit);
      if (found) found_at_total += limit;
    }
    if (!found) worst = std::max(worst, 1.0);
  }
  detail =
      "exhaustive search depth sum over 5 tasks: " + std::to_string(found_at_total);
  return worst;
}

double check_entropy_recompute(std::string&) {
  Rng rng(115);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Trajectory t;
    const int segments = 1 + rng.next_int(5);
    for (int seg = 0; seg < segments; ++seg) {
      const int gen_len = 1 + rng.next_int(6);
      for (int i = 0; i < gen_len; ++i) {
        t.tokens.push_back(0);
        t.entropies.push_back(rng.next_double() * 3.0);
        t.old_log_probs.push_back(-1.0);
        t.loss_mask.push_back(1);
      }
      if (seg + 1 < segments) {
        const int start = t.size();
        const int res_len = 1 + rng.next_int(2);
        for (int i = 0; i < res_len; ++i) {
          t.tokens.push_back(1);
          t.entropies.push_back(0.0);
          t.old_log_probs.push_back(0.0);
          t.loss_mask.push_back(0);
        }
        t.tool_spans.emplace_back(start, start + res_len);
      }
    }
    const int window = 1 + rng.next_int(8);
    const double ln_v = std::log(24.0);
    const EntropyTrace trace = compute_entropy_trace(t, window, ln_v);
    // Brute recomputation from the raw entropy sequence.
    {
      const int first =
          t.tool_spans.empty() ? t.size() : t.tool_spans.front().first;
      const int n = std::min(window, first);
      double sum = 0.0;
      for (int i = 0; i < n; ++i) sum += t.entropies[static_cast<size_t>(i)];
      worst = std::max(worst, std::abs(trace.h_root - sum / std::max(1, n)));
    }
    if (trace.has_tools) {
      double sum = 0.0;
      for (double h : trace.h_tool) sum += h;
      worst = std::max(
          worst,
          std::abs(trace.h_tool_avg - sum / static_cast<double>(trace.h_tool.size())));
    }
    for (std::size_t s = 0; s < trace.delta_h.size(); ++s) {
      const double expect = std::clamp(
          (trace.h_tool[s] - trace.h_root) / ln_v, -1.0, 1.0);
      worst = std::max(worst, std::abs(trace.delta_h[s] - expect));
      if (trace.delta_h[s] < -1.0 || trace.delta_h[s] > 1.0) {
        worst = std::max(worst, 1.0);
      }
    }
  }
  // Fixed-point examples.
  worst = std::max(worst, std::abs(delta_entropy(0.9, 0.3, 2.0) - 0.3));
  worst = std::max(worst, std::abs(delta_entropy(0.4, 0.4, 1.7)));
  worst = std::max(worst,
                   std::abs(delta_entropy(std::log(7.0), 0.0, std::log(7.0)) - 1.0));
  return worst;
}

double check_pass_at_k(std::string&) {
  double worst = 0.0;
  // Exact subset-enumeration oracle at n = 5.
  const int n = 5;
  for (int c = 0; c <= n; ++c) {
    std::vector<int> successes{c};
    const auto est = pass_at_k(successes, n, n);
    for (int j = 1; j <= n; ++j) {
      int hit = 0, total = 0;
      for (int mask = 0; mask < (1 << n); ++mask) {
        if (__builtin_popcount(static_cast<unsigned>(mask)) != j) continue;
        ++total;
        if ((mask & ((1 << c) - 1)) != 0) ++hit;
      }
      const double exact = static_cast<double>(hit) / total;
      worst = std::max(worst,
                       std::abs(est[static_cast<size_t>(j - 1)] - exact));
    }
    for (std::size_t j = 1; j < est.size(); ++j) {
      if (est[j] + 1e-15 < est[j - 1]) worst = std::max(worst, 1.0);
    }
  }
  // Monte-Carlo agreement with 1 - (1-p)^j.
  Rng rng(116);
  const double p = 0.3;
  const int tasks = 400, samples = 40;
  std::vector<int> successes;
  for (int t = 0; t < tasks; ++t) {
    int c = 0;
    for (int s = 0; s < samples; ++s) c += rng.next_double() < p;
    successes.push_back(c);
  }
  const auto est = pass_at_k(successes, samples, 5);
  for (int j = 1; j <= 5; ++j) {
    const double closed = 1.0 - std::pow(1.0 - p, j);
    worst = std::max(worst,
                     std::abs(est[static_cast<size_t>(j - 1)] - closed) / 0.05);
  }
  return worst;
}

}  // namespace

std::vector<OracleResult> run_verification(const VerifyOptions& opt) {
  std::vector<Suite> suites = {
      {"logits-recompute", 1e-12, [](std::string& d) { return check_logits_recompute(d); }},
      {"log-prob-precision", 1e-12, [](std::string& d) { return check_log_prob_precision(d); }},
      {"sample-frequency", 3.0, [](std::string& d) { return check_sample_frequency(d); }},
      {"score-finite-difference", 1e-6, [](std::string& d) { return check_score_fd(d); }},
      {"score-expectation-zero", 1e-10, [](std::string& d) { return check_score_expectation(d); }},
      {"premonitor-allocation", 0.5, [](std::string& d) { return check_premonitor_allocation(d); }},
      {"branch-penalty-law", 1e-12, [](std::string& d) { return check_branch_penalty_law(d); }},
      {"budget-conservation", 0.5, [](std::string& d) { return check_budget_conservation(d); }},
      {"scripted-branch-schedule", 0.5, [](std::string& d) { return check_scripted_branch_schedule(d); }},
      {"rollout-reproducibility", 0.5, [](std::string& d) { return check_rollout_reproducibility(d); }},
      {"advantage-normalization", 1e-9, [](std::string& d) { return check_advantage_normalization(d); }},
      {"forward-invariance", 0.0, [](std::string& d) { return check_forward_invariance(d); }},
      {"gradient-factor-tables", 0.0, [](std::string& d) { return check_gradient_factor_tables(d); }},
      {"kl-properties", 1e-12, [](std::string& d) { return check_kl_properties(d); }},
      {"importance-ratio-precision", 1e-12, [](std::string& d) { return check_importance_ratio_precision(d); }},
      {"sg-frozen-gradient", 1e-5,
       [&opt](std::string& d) {
         return check_sg_frozen_gradient(d, opt.mutate_gradient_factor);
       }},
      {"plain-fd-recovers-grpo", 1e-5, [](std::string& d) { return check_plain_fd_grpo(d); }},
      {"tool-world-solvability", 0.5, [](std::string& d) { return check_tool_world_solvability(d); }},
      {"entropy-recompute", 1e-12, [](std::string& d) { return check_entropy_recompute(d); }},
      {"pass-at-k-estimator", 1.0, [](std::string& d) { return check_pass_at_k(d); }},
  };

  std::vector<OracleResult> results;
  results.reserve(suites.size());
  for (Suite& suite : suites) {
    OracleResult r;
    r.name = suite.name;
    r.tolerance = suite.tolerance;
    const auto t0 = Clock::now();
    try {
      r.measured = suite.run(r.detail);
      r.pass = r.measured <= suite.tolerance;
    } catch (const std::exception& e) {
      r.pass = false;
      r.measured = std::numeric_limits<double>::infinity();
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    results.push_back(std::move(r));
  }
  return results;
}

std::string format_verification_report(const std::vector<OracleResult>& rs) {
  std::ostringstream os;
  os.precision(6);
  int failed = 0;
  for (const OracleResult& r : rs) {
    os << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  measured "
       << std::scientific << r.measured << "  tol " << r.tolerance
       << std::defaultfloat << "  (" << r.seconds << " s)";
    if (!r.detail.empty()) os << "  " << r.detail;
    os << "\n";
    failed += !r.pass;
  }
  os << rs.size() - static_cast<size_t>(failed) << "/" << rs.size()
     << " oracle suites passed\n";
  return os.str();
}

}  // namespace aepo
