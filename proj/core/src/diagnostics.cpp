#include "aepo/diagnostics.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "aepo/errors.hpp"

namespace aepo {

std::vector<PoolDumpRecord> load_pool_dump(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pool dump: " + path.string());
  std::vector<PoolDumpRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PoolDumpRecord r;
      r.pool = j.at("pool").get<int>();
      r.chain = j.at("chain").get<int>();
      r.parent = j.at("parent").is_null() ? -1 : j.at("parent").get<int>();
      r.branch_step =
          j.at("branch_step").is_null() ? -1 : j.at("branch_step").get<int>();
      r.tokens = j.at("tokens").get<std::vector<int>>();
      r.mask = j.at("mask").get<std::vector<std::uint8_t>>();
      r.reward = j.at("reward").get<double>();
      r.delta_h = j.at("delta_h").get<std::vector<double>>();
      for (const auto& e : j.at("branch_events")) {
        r.branch_events.emplace_back(e.at("step").get<int>(),
                                     e.at("width").get<int>());
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad pool record: ") + e.what(), lineno);
    }
  }
  return records;
}

DiagnosticsReport diagnose_records(
    const std::vector<PoolDumpRecord>& records) {
  if (records.empty()) throw UsageError("diagnose needs at least one record");
  DiagnosticsReport rep;
  rep.trajectories = static_cast<std::int64_t>(records.size());

  std::int64_t tool_calls_total = 0;
  std::set<std::vector<int>> distinct_grams;
  std::int64_t total_grams = 0;

  std::map<int, std::set<int>> branched_chains_by_pool;
  std::set<int> pool_ids;

  for (const PoolDumpRecord& r : records) {
    pool_ids.insert(r.pool);
    if (!r.branch_events.empty()) {
      branched_chains_by_pool[r.pool].insert(r.chain);
    } else {
      branched_chains_by_pool.try_emplace(r.pool);
    }

    // Maximal runs of consecutive high-entropy tool steps.
    int run = 0;
    for (std::size_t s = 0; s <= r.delta_h.size(); ++s) {
      const bool high = s < r.delta_h.size() && r.delta_h[s] > 0.0;
      if (high) {
        ++run;
      } else if (run > 0) {
        rep.consecutive_run_hist[run] += 1;
        if (run >= 2) {
          rep.high_entropy_steps_in_runs += run;
        } else {
          rep.high_entropy_steps_isolated += 1;
        }
        run = 0;
      }
    }

    // Tool spans are recoverable from the mask: maximal masked stretches.
    int spans = 0;
    bool in_span = false;
    for (std::uint8_t m : r.mask) {
      if (m == 0 && !in_span) {
        ++spans;
        in_span = true;
      } else if (m != 0) {
        in_span = false;
      }
    }
    rep.tool_calls_hist[spans] += 1;
    tool_calls_total += spans;

    for (std::size_t i = 0; i + 4 <= r.tokens.size(); ++i) {
      distinct_grams.insert(std::vector<int>(r.tokens.begin() + i,
                                             r.tokens.begin() + i + 4));
      ++total_grams;
    }
  }

  rep.pools = static_cast<std::int64_t>(pool_ids.size());
  for (const auto& [pool, chains] : branched_chains_by_pool) {
    rep.branch_spread_hist[static_cast<int>(chains.size())] += 1;
  }
  rep.mean_tool_calls = static_cast<double>(tool_calls_total) /
                        static_cast<double>(records.size());
  rep.distinct_ngram_ratio =
      total_grams == 0 ? 0.0
                       : static_cast<double>(distinct_grams.size()) /
                             static_cast<double>(total_grams);
  return rep;
}

DiagnosticsReport diagnose_files(
    const std::vector<std::filesystem::path>& paths) {
  std::vector<PoolDumpRecord> all;
  int pool_offset = 0;
  for (const auto& path : paths) {
    auto records = load_pool_dump(path);
    int max_pool = -1;
    for (auto& r : records) {
      r.pool += pool_offset;
      max_pool = std::max(max_pool, r.pool);
      all.push_back(std::move(r));
    }
    pool_offset = max_pool + 1;
  }
  return diagnose_records(all);
}

std::string DiagnosticsReport::to_text() const {
  std::ostringstream os;
  os << "pools: " << pools << "  trajectories: " << trajectories << "\n";
  os << "consecutive high-entropy run lengths:\n";
  for (const auto& [len, count] : consecutive_run_hist) {
    os << "  run=" << len << "  count=" << count << "\n";
  }
  const double steps_total = static_cast<double>(
      high_entropy_steps_in_runs + high_entropy_steps_isolated);
  if (steps_total > 0) {
    os << "  consecutive share: "
       << static_cast<double>(high_entropy_steps_in_runs) / steps_total
       << "  isolated share: "
       << static_cast<double>(high_entropy_steps_isolated) / steps_total
       << "\n";
  }
  os << "branch spread (distinct branched chains per pool):\n";
  for (const auto& [chains, count] : branch_spread_hist) {
    os << "  chains=" << chains << "  pools=" << count << "\n";
  }
  os << "tool calls per trajectory:\n";
  for (const auto& [calls, count] : tool_calls_hist) {
    os << "  calls=" << calls << "  trajectories=" << count << "\n";
  }
  os << "mean tool calls: " << mean_tool_calls << "\n";
  os << "distinct 4-gram ratio: " << distinct_ngram_ratio << "\n";
  return os.str();
}

std::string DiagnosticsReport::to_json() const {
  nlohmann::ordered_json j;
  j["pools"] = pools;
  j["trajectories"] = trajectories;
  nlohmann::ordered_json runs = nlohmann::ordered_json::object();
  for (const auto& [len, count] : consecutive_run_hist) {
    runs[std::to_string(len)] = count;
  }
  j["consecutive_run_hist"] = runs;
  j["high_entropy_steps_in_runs"] = high_entropy_steps_in_runs;
  j["high_entropy_steps_isolated"] = high_entropy_steps_isolated;
  nlohmann::ordered_json spread = nlohmann::ordered_json::object();
  for (const auto& [chains, count] : branch_spread_hist) {
    spread[std::to_string(chains)] = count;
  }
  j["branch_spread_hist"] = spread;
  nlohmann::ordered_json tools = nlohmann::ordered_json::object();
  for (const auto& [calls, count] : tool_calls_hist) {
    tools[std::to_string(calls)] = count;
  }
  j["tool_calls_hist"] = tools;
  j["mean_tool_calls"] = mean_tool_calls;
  j["distinct_ngram_ratio"] = distinct_ngram_ratio;
  return j.dump(2);
}

}  // namespace aepo
