#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aepo/advantage.hpp"
#include "aepo/rollout.hpp"
#include "aepo/update.hpp"

namespace aepo {

/// Full training-run configuration. Keys of the flat key=value config file
/// map 1:1 to these fields; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  int vocab = 24;
  int group_size = 8;  // must equal rollout.k
  int batch = 16;      // queries per step
  int minibatch = 4;   // queries per policy update
  int epochs = 1;      // passes over the step's batch
  int steps = 500;
  double lr = 0.05;
  double a_weight = 0.2;
  EntropyAdvScope entropy_adv_scope = EntropyAdvScope::Trajectory;
  RolloutConfig rollout{};
  UpdateRule rule = UpdateRule::make(RuleVariant::Aepo);
  double tau_dec = 0.6;
  int context_window = 8;
  int l_max = 64;
  std::string task_depth = "0,1,2,2";  // cycle of depths for the task set
  int task_count = 256;
  std::string task_file;  // overrides the generator when set
  double tool_failure_rate = 0.0;
  int checkpoint_every = 100;
  bool dump_pools = false;
  int threads = 1;
  double init_scale = 0.0;
  std::string out_dir = "runs/default";

  std::vector<int> depth_cycle() const;
  void validate() const;
};

/// Parses `key=value` lines ('#' comments and blank lines allowed).
/// Unknown keys raise ConfigError; later assignments win.
RunConfig parse_config(const std::map<std::string, std::string>& kv,
                       RunConfig base = {});
RunConfig load_config_file(const std::filesystem::path& path,
                           RunConfig base = {});
std::map<std::string, std::string> read_key_value_file(
    const std::filesystem::path& path);

/// Serializes every key in canonical order (the run-directory config copy).
std::string dump_config(const RunConfig& cfg);

/// The full set of recognized keys, for CLI flag generation.
const std::vector<std::string>& config_keys();

}  // namespace aepo
