#pragma once

#include <string>
#include <vector>

#include "graft/harness/config.hpp"

// Self-check batteries behind the `check` CLI verb. All suites run in double
// precision against the config's model spec (plus a few fixed fixtures) and
// return a row per check; nothing here throws on a mere check failure.

namespace graft {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;
  bool all_pass() const {
    for (const CheckResult& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

// name: grad | invariants | cost | oracle. Unknown names are config errors.
SuiteReport run_suite(const std::string& name, const RunConfig& cfg);

}  // namespace graft
