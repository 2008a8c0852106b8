#pragma once

#include <span>
#include <vector>

#include "aepo/rollout.hpp"

namespace aepo {

enum class EntropyAdvScope { Trajectory, Group };

/// Per-token advantages for one group of trajectories answering the same
/// query. `acc` is constant within a trajectory; masked tokens carry values
/// for bookkeeping but never reach the loss.
struct GroupAdvantages {
  std::vector<std::vector<double>> acc;
  std::vector<std::vector<double>> ent;
  std::vector<std::vector<double>> reshaped;
  double a_weight = 0.0;
};

/// Group-normalized accuracy advantage (R_i - mean) / std over the group,
/// population statistics, std floored at 1e-8; identical rewards give
/// exactly zero.
std::vector<double> accuracy_advantage(std::span<const double> rewards);

/// Per-token standardized entropy over the trajectory's unmasked tokens.
/// Constant or too-short trajectories give zeros; masked tokens get zero.
std::vector<double> entropy_advantage(const Trajectory& traj);

/// a = 0 returns `acc` unchanged (bitwise).
std::vector<double> reshape_advantage(std::span<const double> acc,
                                      std::span<const double> ent, double a);

GroupAdvantages compute_group_advantages(const RolloutPool& pool,
                                         double a_weight,
                                         EntropyAdvScope scope);

}  // namespace aepo
