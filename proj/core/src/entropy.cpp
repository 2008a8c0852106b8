#include "aepo/entropy.hpp"

#include <algorithm>

#include "aepo/errors.hpp"

namespace aepo {

double root_entropy(const Trajectory& traj, int window) {
  if (traj.unmasked_count() < 1) {
    throw UsageError("root_entropy needs at least one policy token");
  }
  int prefix_end = traj.size();
  if (!traj.tool_spans.empty()) prefix_end = traj.tool_spans.front().first;
  const int n = std::min(window, prefix_end);
  if (n <= 0) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += traj.entropies[static_cast<size_t>(i)];
  return sum / n;
}

double tool_step_entropy(const Trajectory& traj, int step) {
  if (step < 0 || step >= static_cast<int>(traj.tool_spans.size())) {
    throw UsageError("tool step out of range: " + std::to_string(step));
  }
  const int begin = traj.tool_spans[static_cast<size_t>(step)].second;
  const int end = step + 1 < static_cast<int>(traj.tool_spans.size())
                      ? traj.tool_spans[static_cast<size_t>(step) + 1].first
                      : traj.size();
  double sum = 0.0;
  int count = 0;
  for (int i = begin; i < end; ++i) {
    if (traj.loss_mask[static_cast<size_t>(i)]) {
      sum += traj.entropies[static_cast<size_t>(i)];
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / count;
}

std::optional<double> tool_avg_entropy(
    std::span<const double> step_entropies) {
  if (step_entropies.empty()) return std::nullopt;
  double sum = 0.0;
  for (double h : step_entropies) sum += h;
  return sum / static_cast<double>(step_entropies.size());
}

double delta_entropy(double h_t, double h_root, double ln_vocab) {
  const double d = (h_t - h_root) / ln_vocab;
  return std::clamp(d, -1.0, 1.0);
}

EntropyTrace compute_entropy_trace(const Trajectory& traj, int window,
                                   double ln_vocab) {
  EntropyTrace trace;
  trace.h_root = root_entropy(traj, window);
  const int steps = static_cast<int>(traj.tool_spans.size());
  trace.h_tool.reserve(static_cast<size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    trace.h_tool.push_back(tool_step_entropy(traj, i));
  }
  if (const auto avg = tool_avg_entropy(trace.h_tool)) {
    trace.h_tool_avg = *avg;
    trace.has_tools = true;
  }
  trace.delta_h.reserve(trace.h_tool.size());
  for (double h : trace.h_tool) {
    trace.delta_h.push_back(delta_entropy(h, trace.h_root, ln_vocab));
  }
  return trace;
}

}  // namespace aepo
