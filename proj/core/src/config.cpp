#include "aepo/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "aepo/errors.hpp"

namespace aepo {

namespace {

long long parse_int(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(val, &pos);
    if (pos != val.size()) throw std::invalid_argument(val);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + val +
                      "'");
  }
}

double parse_real(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(val, &pos);
    if (pos != val.size()) throw std::invalid_argument(val);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + val + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& val) {
  if (val == "true" || val == "1" || val == "yes") return true;
  if (val == "false" || val == "0" || val == "no") return false;
  throw ConfigError("key '" + key + "' expects a boolean, got '" + val + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key,
                                  const std::string& val)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_int(k, v));
       }},
      {"vocab",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.vocab = static_cast<int>(parse_int(k, v));
       }},
      {"k",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rollout.k = static_cast<int>(parse_int(k, v));
       }},
      {"beta_sens",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rollout.beta_sens = parse_real(k, v);
       }},
      {"alpha_base",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rollout.alpha_base = parse_real(k, v);
       }},
      {"gamma_ent",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rollout.gamma_ent = parse_real(k, v);
       }},
      {"lambda_pen",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rollout.lambda_pen = parse_real(k, v);
       }},
      {"tau_branch",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rollout.tau_branch = parse_real(k, v);
       }},
      {"z",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rollout.branch_width = static_cast<int>(parse_int(k, v));
       }},
      {"w_root",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rollout.root_window = static_cast<int>(parse_int(k, v));
       }},
      {"stochastic_branch",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rollout.stochastic_branching = parse_bool(k, v);
       }},
      {"eps_low",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rule.clip.eps_low = parse_real(k, v);
       }},
      {"eps_high",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rule.clip.eps_high = parse_real(k, v);
       }},
      {"rule",
       [](RunConfig& c, const std::string&, const std::string& v) {
         const double kl = c.rule.kl_coef;
         const double b1 = c.rule.gppo_beta1;
         const double b2 = c.rule.gppo_beta2;
         c.rule = UpdateRule::make(rule_from_name(v));
         c.rule.kl_coef = kl;
         c.rule.gppo_beta1 = b1;
         c.rule.gppo_beta2 = b2;
       }},
      {"gppo_beta1",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rule.gppo_beta1 = parse_real(k, v);
       }},
      {"gppo_beta2",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rule.gppo_beta2 = parse_real(k, v);
       }},
      {"kl_coef",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.rule.kl_coef = parse_real(k, v);
       }},
      {"a_weight",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.a_weight = parse_real(k, v);
       }},
      {"entropy_adv_scope",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "trajectory") {
           c.entropy_adv_scope = EntropyAdvScope::Trajectory;
         } else if (v == "group") {
           c.entropy_adv_scope = EntropyAdvScope::Group;
         } else {
           throw ConfigError("key '" + k + "' expects trajectory|group");
         }
       }},
      {"lr",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.lr = parse_real(k, v);
       }},
      {"group_size",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.group_size = static_cast<int>(parse_int(k, v));
       }},
      {"batch",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.batch = static_cast<int>(parse_int(k, v));
       }},
      {"minibatch",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.minibatch = static_cast<int>(parse_int(k, v));
       }},
      {"epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.epochs = static_cast<int>(parse_int(k, v));
       }},
      {"steps",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.steps = static_cast<int>(parse_int(k, v));
       }},
      {"tau_dec",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.tau_dec = parse_real(k, v);
       }},
      {"context_window",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.context_window = static_cast<int>(parse_int(k, v));
       }},
      {"l_max",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.l_max = static_cast<int>(parse_int(k, v));
       }},
      {"task_depth",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.task_depth = v;
       }},
      {"task_count",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.task_count = static_cast<int>(parse_int(k, v));
       }},
      {"task_file",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.task_file = v;
       }},
      {"tool_failure_rate",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.tool_failure_rate = parse_real(k, v);
       }},
      {"checkpoint_every",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.checkpoint_every = static_cast<int>(parse_int(k, v));
       }},
      {"dump_pools",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.dump_pools = parse_bool(k, v);
       }},
      {"threads",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.threads = static_cast<int>(parse_int(k, v));
       }},
      {"init_scale",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.init_scale = parse_real(k, v);
       }},
      {"out_dir",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.out_dir = v;
       }},
  };
  return table;
}

}  // namespace

std::vector<int> RunConfig::depth_cycle() const {
  std::vector<int> depths;
  std::stringstream ss(task_depth);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    depths.push_back(static_cast<int>(parse_int("task_depth", item)));
  }
  if (depths.empty()) throw ConfigError("task_depth produced no depths");
  for (int d : depths) {
    if (d < 0) throw ConfigError("task_depth entries must be >= 0");
  }
  return depths;
}

void RunConfig::validate() const {
  rollout.validate();
  rule.clip.validate();
  if (group_size != rollout.k) {
    throw ConfigError("group_size must equal k (each query's pool is one "
                      "advantage group)");
  }
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (minibatch < 1 || minibatch > batch) {
    throw ConfigError("minibatch must lie in [1, batch]");
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(tau_dec > 0.0)) throw ConfigError("tau_dec must be positive");
  if (vocab < 16) throw ConfigError("vocab must be >= 16");
  if (l_max < 4) throw ConfigError("l_max must be >= 4");
  if (context_window < 1) throw ConfigError("context_window must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (task_count < 1) throw ConfigError("task_count must be >= 1");
  if (tool_failure_rate < 0.0 || tool_failure_rate > 1.0) {
    throw ConfigError("tool_failure_rate must lie in [0,1]");
  }
  if (rule.kl_coef < 0.0) throw ConfigError("kl_coef must be >= 0");
  depth_cycle();
}

RunConfig parse_config(const std::map<std::string, std::string>& kv,
                       RunConfig base) {
  for (const auto& [key, val] : kv) {
    bool known = false;
    for (const auto& [name, set] : setters()) {
      if (name == key) {
        set(base, key, val);
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown config key: " + key);
  }
  return base;
}

std::map<std::string, std::string> read_key_value_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("expected key=value", lineno);
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string()
                                    : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", lineno);
    kv[key] = val;
  }
  return kv;
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
  return parse_config(read_key_value_file(path), std::move(base));
}

std::string dump_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "seed=" << c.seed << "\n";
  os << "vocab=" << c.vocab << "\n";
  os << "k=" << c.rollout.k << "\n";
  os << "beta_sens=" << c.rollout.beta_sens << "\n";
  os << "alpha_base=" << c.rollout.alpha_base << "\n";
  os << "gamma_ent=" << c.rollout.gamma_ent << "\n";
  os << "lambda_pen=" << c.rollout.lambda_pen << "\n";
  os << "tau_branch=" << c.rollout.tau_branch << "\n";
  os << "z=" << c.rollout.branch_width << "\n";
  os << "w_root=" << c.rollout.root_window << "\n";
  os << "stochastic_branch=" << (c.rollout.stochastic_branching ? "true" : "false") << "\n";
  os << "rule=" << rule_name(c.rule.variant) << "\n";
  os << "eps_low=" << c.rule.clip.eps_low << "\n";
  os << "eps_high=" << c.rule.clip.eps_high << "\n";
  os << "gppo_beta1=" << c.rule.gppo_beta1 << "\n";
  os << "gppo_beta2=" << c.rule.gppo_beta2 << "\n";
  os << "kl_coef=" << c.rule.kl_coef << "\n";
  os << "a_weight=" << c.a_weight << "\n";
  os << "entropy_adv_scope="
     << (c.entropy_adv_scope == EntropyAdvScope::Trajectory ? "trajectory"
                                                            : "group")
     << "\n";
  os << "lr=" << c.lr << "\n";
  os << "group_size=" << c.group_size << "\n";
  os << "batch=" << c.batch << "\n";
  os << "minibatch=" << c.minibatch << "\n";
  os << "epochs=" << c.epochs << "\n";
  os << "steps=" << c.steps << "\n";
  os << "tau_dec=" << c.tau_dec << "\n";
  os << "context_window=" << c.context_window << "\n";
  os << "l_max=" << c.l_max << "\n";
  os << "task_depth=" << c.task_depth << "\n";
  os << "task_count=" << c.task_count << "\n";
  if (!c.task_file.empty()) os << "task_file=" << c.task_file << "\n";
  os << "tool_failure_rate=" << c.tool_failure_rate << "\n";
  os << "checkpoint_every=" << c.checkpoint_every << "\n";
  os << "dump_pools=" << (c.dump_pools ? "true" : "false") << "\n";
  os << "threads=" << c.threads << "\n";
  os << "init_scale=" << c.init_scale << "\n";
  os << "out_dir=" << c.out_dir << "\n";
  return os.str();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

}  // namespace aepo
