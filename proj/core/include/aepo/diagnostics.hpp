#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace aepo {

/// One trajectory line of a pool dump, as read back from JSONL.
struct PoolDumpRecord {
  int pool = 0;
  int chain = 0;
  int parent = -1;  // -1 when the chain is a global sample
  int branch_step = -1;
  std::vector<int> tokens;
  std::vector<std::uint8_t> mask;
  double reward = 0.0;
  std::vector<double> delta_h;
  std::vector<std::pair<int, int>> branch_events;  // (step, width)
};

/// Pool-dump statistics mirroring the pilot-experiment measurements:
/// consecutive high-entropy run lengths, how widely branches spread over
/// chains, tool usage, and a cheap n-gram diversity proxy.
struct DiagnosticsReport {
  std::map<int, std::int64_t> consecutive_run_hist;  // run length -> count
  std::int64_t high_entropy_steps_in_runs = 0;   // steps inside runs >= 2
  std::int64_t high_entropy_steps_isolated = 0;  // steps in runs of length 1
  std::map<int, std::int64_t> branch_spread_hist;  // distinct chains -> pools
  std::map<int, std::int64_t> tool_calls_hist;     // spans per trajectory
  double mean_tool_calls = 0.0;
  double distinct_ngram_ratio = 0.0;  // distinct 4-grams / total 4-grams
  std::int64_t pools = 0;
  std::int64_t trajectories = 0;

  std::string to_text() const;
  std::string to_json() const;
};

std::vector<PoolDumpRecord> load_pool_dump(const std::filesystem::path& path);

DiagnosticsReport diagnose_records(const std::vector<PoolDumpRecord>& records);

DiagnosticsReport diagnose_files(
    const std::vector<std::filesystem::path>& paths);

}  // namespace aepo
