// Command-line front end: train / evaluate / diagnose / verify / compare /
// dump-tasks. Flags map 1:1 to config keys; --config loads a file and later
// flags override it. Exit codes: 0 ok, 2 config error, 3 oracle failure,
// 4 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aepo/config.hpp"
#include "aepo/diagnostics.hpp"
#include "aepo/errors.hpp"
#include "aepo/tool_world.hpp"
#include "aepo/trainer.hpp"
#include "aepo/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitOracle = 3;
constexpr int kExitIo = 4;

struct ConfigCli {
  std::string config_file;
  std::map<std::string, std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigCli& cc) {
  cmd->add_option("--config", cc.config_file, "key=value config file");
  for (const std::string& key : aepo::config_keys()) {
    cmd->add_option_function<std::string>(
        "--" + key,
        [&cc, key](const std::string& v) { cc.overrides[key] = v; },
        "config key '" + key + "'");
  }
}

aepo::RunConfig build_config(const ConfigCli& cc) {
  aepo::RunConfig cfg;
  if (!cc.config_file.empty()) {
    cfg = aepo::load_config_file(cc.config_file, cfg);
  }
  cfg = aepo::parse_config(cc.overrides, cfg);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale entropy-balanced policy optimization workbench"};
  app.require_subcommand(1);

  ConfigCli train_cfg;
  std::string resume_dir;
  auto* train_cmd = app.add_subcommand("train", "run the training loop");
  add_config_options(train_cmd, train_cfg);
  train_cmd->add_option("--resume", resume_dir,
                        "checkpoint directory to resume from");
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "suppress per-step progress");

  ConfigCli eval_cfg;
  std::string eval_checkpoint;
  std::string eval_tasks;
  int eval_samples = 5;
  auto* eval_cmd = app.add_subcommand("evaluate", "pass@k evaluation");
  add_config_options(eval_cmd, eval_cfg);
  eval_cmd->add_option("--checkpoint", eval_checkpoint,
                       "checkpoint directory")->required();
  eval_cmd->add_option("--tasks", eval_tasks, "task JSONL file");
  eval_cmd->add_option("-n,--samples", eval_samples,
                       "independent samples per task");

  std::vector<std::string> diag_files;
  bool diag_json = false;
  auto* diag_cmd = app.add_subcommand("diagnose", "pool-dump statistics");
  diag_cmd->add_option("files", diag_files, "pool dump JSONL files")
      ->required();
  diag_cmd->add_flag("--json", diag_json, "emit JSON instead of text");

  bool verify_mutate = false;
  auto* verify_cmd =
      app.add_subcommand("verify", "run every numerical oracle suite");
  verify_cmd->add_flag("--mutate", verify_mutate,
                       "negative control: corrupt the gradient factor");

  ConfigCli compare_cfg;
  std::string compare_rules_csv = "aepo,grpo";
  std::string compare_seeds_csv = "0";
  std::string compare_out;
  auto* compare_cmd =
      app.add_subcommand("compare", "train several rules on identical seeds");
  add_config_options(compare_cmd, compare_cfg);
  compare_cmd->add_option("--rules", compare_rules_csv,
                          "comma-separated rule list");
  compare_cmd->add_option("--seeds", compare_seeds_csv,
                          "comma-separated seed list");
  compare_cmd->add_option("--csv-out", compare_out, "write the CSV here");

  ConfigCli dump_cfg;
  std::string dump_out = "tasks.jsonl";
  auto* dump_cmd = app.add_subcommand("dump-tasks", "write a task set");
  add_config_options(dump_cmd, dump_cfg);
  dump_cmd->add_option("-o,--out", dump_out, "output JSONL path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const aepo::RunConfig cfg = build_config(train_cfg);
      std::optional<aepo::Checkpoint> resume;
      if (!resume_dir.empty()) {
        resume = aepo::Checkpoint::load(resume_dir);
      }
      const aepo::TrainResult result =
          aepo::train(cfg, resume, quiet ? nullptr : &std::cout);
      std::cout << "run directory: " << result.run_dir.string() << "\n";
      if (!result.metrics.empty()) {
        std::cout << "final mean reward: "
                  << result.metrics.back().mean_reward << "\n";
      }
      return kExitOk;
    }
    if (*eval_cmd) {
      const aepo::RunConfig cfg = build_config(eval_cfg);
      const aepo::Checkpoint ck = aepo::Checkpoint::load(eval_checkpoint);
      std::vector<aepo::Task> tasks;
      if (!eval_tasks.empty()) tasks = aepo::load_tasks_jsonl(eval_tasks);
      const aepo::EvalResult res =
          aepo::evaluate(ck.policy, cfg, tasks, eval_samples);
      std::cout << "mean reward: " << res.mean_reward << "\n";
      for (std::size_t j = 0; j < res.pass_at.size(); ++j) {
        std::cout << "pass@" << (j + 1) << ": " << res.pass_at[j] << "\n";
      }
      return kExitOk;
    }
    if (*diag_cmd) {
      std::vector<std::filesystem::path> paths(diag_files.begin(),
                                               diag_files.end());
      const aepo::DiagnosticsReport rep = aepo::diagnose_files(paths);
      std::cout << (diag_json ? rep.to_json() : rep.to_text());
      return kExitOk;
    }
    if (*verify_cmd) {
      aepo::VerifyOptions opt;
      opt.mutate_gradient_factor = verify_mutate;
      const auto results = aepo::run_verification(opt);
      std::cout << aepo::format_verification_report(results);
      for (const auto& r : results) {
        if (!r.pass) return kExitOracle;
      }
      return kExitOk;
    }
    if (*compare_cmd) {
      const aepo::RunConfig cfg = build_config(compare_cfg);
      std::vector<aepo::RuleVariant> rules;
      std::stringstream rs(compare_rules_csv);
      std::string item;
      while (std::getline(rs, item, ',')) {
        if (!item.empty()) rules.push_back(aepo::rule_from_name(item));
      }
      std::vector<std::uint64_t> seeds;
      std::stringstream ss(compare_seeds_csv);
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) seeds.push_back(std::stoull(item));
      }
      const aepo::CompareResult result =
          aepo::compare_rules(cfg, rules, seeds, &std::cout);
      if (!compare_out.empty()) {
        std::ofstream out(compare_out);
        if (!out) throw aepo::IoError("cannot write " + compare_out);
        out << result.csv;
      } else {
        std::cout << result.csv;
      }
      std::cout << "rule,seed,final_reward,max_entropy_drop\n";
      for (const aepo::CompareRun& run : result.runs) {
        std::cout << aepo::rule_name(run.rule) << "," << run.seed << ","
                  << run.final_reward << "," << run.max_entropy_drop << "\n";
      }
      return kExitOk;
    }
    if (*dump_cmd) {
      const aepo::RunConfig cfg = build_config(dump_cfg);
      const aepo::WorldBundle world = aepo::make_world(cfg);
      aepo::save_tasks_jsonl(dump_out, world.tasks);
      std::cout << "wrote " << world.tasks.size() << " tasks to " << dump_out
                << "\n";
      return kExitOk;
    }
  } catch (const aepo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const aepo::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitIo;
  } catch (const aepo::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const aepo::OracleError& e) {
    std::cerr << "oracle failure: " << e.what() << "\n";
    return kExitOracle;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
