#pragma once

#include <string>
#include <vector>

namespace aepo {

struct OracleResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;   // worst observed error / statistic
  double tolerance = 0.0;  // bound it is held against
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  /// Negative control: corrupts the analytic gradient-factor table that the
  /// stop-gradient finite-difference check compares against, which must
  /// make that suite fail.
  bool mutate_gradient_factor = false;
};

/// Runs every numerical oracle suite and reports measured error against its
/// pinned tolerance. Deterministic; seeds are fixed constants.
std::vector<OracleResult> run_verification(const VerifyOptions& opt = {});

std::string format_verification_report(const std::vector<OracleResult>& rs);

}  // namespace aepo
