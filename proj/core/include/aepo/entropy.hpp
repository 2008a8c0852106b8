#pragma once

#include <optional>
#include <span>
#include <vector>

#include "aepo/tool_world.hpp"

namespace aepo {

/// Entropy quantities of one trajectory: the root entropy of the opening
/// window, per-tool-step entropies of the segments that follow each tool
/// result, their mean, and the normalized per-step variation.
struct EntropyTrace {
  double h_root = 0.0;
  std::vector<double> h_tool;
  double h_tool_avg = 0.0;  // meaningful only when has_tools
  bool has_tools = false;
  std::vector<double> delta_h;
};

/// Mean entropy of the first min(window, first-tool-boundary) policy tokens.
double root_entropy(const Trajectory& traj, int window);

/// Mean per-token entropy of the policy tokens between tool result `step`
/// and the next tool span (or the end of the trajectory). An empty segment
/// contributes 0.
double tool_step_entropy(const Trajectory& traj, int step);

/// Arithmetic mean; nullopt signals the no-tool condition (N = 0).
std::optional<double> tool_avg_entropy(std::span<const double> step_entropies);

/// (h_t - h_root) / ln_vocab, clamped to [-1, 1].
double delta_entropy(double h_t, double h_root, double ln_vocab);

EntropyTrace compute_entropy_trace(const Trajectory& traj, int window,
                                   double ln_vocab);

}  // namespace aepo
