#include "aepo/advantage.hpp"

#include <algorithm>
#include <cmath>

#include "aepo/errors.hpp"

namespace aepo {

namespace {

constexpr double kStdFloor = 1e-8;

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;  // population
  bool constant = true;
};

Moments population_moments(std::span<const double> xs) {
  Moments m;
  if (xs.empty()) return m;
  double sum = 0.0;
  for (double x : xs) sum += x;
  m.mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(sq / static_cast<double>(xs.size()));
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  m.constant = (*lo == *hi);
  return m;
}

}  // namespace

std::vector<double> accuracy_advantage(std::span<const double> rewards) {
  if (rewards.size() < 2) {
    throw UsageError("accuracy advantage needs a group of >= 2 rewards");
  }
  std::vector<double> out(rewards.size(), 0.0);
  const Moments m = population_moments(rewards);
  if (m.constant) return out;
  const double denom = std::max(m.stddev, kStdFloor);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = (rewards[i] - m.mean) / denom;
  }
  return out;
}

std::vector<double> entropy_advantage(const Trajectory& traj) {
  std::vector<double> out(traj.tokens.size(), 0.0);
  std::vector<double> unmasked;
  unmasked.reserve(traj.tokens.size());
  for (std::size_t i = 0; i < traj.tokens.size(); ++i) {
    if (traj.loss_mask[i]) unmasked.push_back(traj.entropies[i]);
  }
  if (unmasked.size() < 2) return out;
  const Moments m = population_moments(unmasked);
  if (m.constant) return out;
  const double denom = std::max(m.stddev, kStdFloor);
  for (std::size_t i = 0; i < traj.tokens.size(); ++i) {
    if (traj.loss_mask[i]) out[i] = (traj.entropies[i] - m.mean) / denom;
  }
  return out;
}

std::vector<double> reshape_advantage(std::span<const double> acc,
                                      std::span<const double> ent, double a) {
  if (acc.size() != ent.size()) {
    throw UsageError("advantage shape mismatch");
  }
  std::vector<double> out(acc.begin(), acc.end());
  if (a == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = acc[i] * (1.0 + a * ent[i]);
  }
  return out;
}

GroupAdvantages compute_group_advantages(const RolloutPool& pool,
                                         double a_weight,
                                         EntropyAdvScope scope) {
  const auto& trajs = pool.trajectories;
  if (trajs.size() < 2) {
    throw UsageError("advantage group needs >= 2 trajectories");
  }
  GroupAdvantages ga;
  ga.a_weight = a_weight;

  std::vector<double> rewards;
  rewards.reserve(trajs.size());
  for (const auto& t : trajs) rewards.push_back(t.reward);
  const std::vector<double> acc_scalar = accuracy_advantage(rewards);

  ga.acc.resize(trajs.size());
  ga.ent.resize(trajs.size());
  ga.reshaped.resize(trajs.size());

  if (scope == EntropyAdvScope::Trajectory) {
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      ga.ent[i] = entropy_advantage(trajs[i]);
    }
  } else {
    // Group scope: standardize over every unmasked token in the pool.
    std::vector<double> all;
    for (const auto& t : trajs) {
      for (std::size_t j = 0; j < t.tokens.size(); ++j) {
        if (t.loss_mask[j]) all.push_back(t.entropies[j]);
      }
    }
    const Moments m = population_moments(all);
    const double denom = std::max(m.stddev, kStdFloor);
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      const auto& t = trajs[i];
      ga.ent[i].assign(t.tokens.size(), 0.0);
      if (m.constant || all.size() < 2) continue;
      for (std::size_t j = 0; j < t.tokens.size(); ++j) {
        if (t.loss_mask[j]) ga.ent[i][j] = (t.entropies[j] - m.mean) / denom;
      }
    }
  }

  for (std::size_t i = 0; i < trajs.size(); ++i) {
    ga.acc[i].assign(trajs[i].tokens.size(), acc_scalar[i]);
    ga.reshaped[i] = reshape_advantage(ga.acc[i], ga.ent[i], a_weight);
  }
  return ga;
}

}  // namespace aepo
