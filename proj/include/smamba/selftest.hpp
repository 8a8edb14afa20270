#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace smamba::selftest {

struct Options {
  std::string filter;        // group or check name; empty runs everything
  std::string inject_fault;  // check name whose inputs get corrupted
  std::uint64_t seed = 42;
  std::size_t threads = 1;
};

struct CheckResult {
  bool passed = false;
  std::string detail;
};

struct Check {
  std::string group;  // oracle, fusion, ssm, train
  std::string name;
  std::function<CheckResult(const Options&)> run;
};

const std::vector<Check>& checks();

// Prints one "PASS|FAIL group/name: detail" line per selected check.
// Returns the number of failures; throws UsageError when the filter matches nothing.
std::size_t run(const Options& opts, std::ostream& out);

}  // namespace smamba::selftest
