#pragma once

#include <string>
#include <vector>

namespace iontrap {

// One measured figure of merit from the end-to-end check suite. `value`
// is the measurement, `threshold` the bound it was held against; the
// direction of the comparison is baked into `pass`, and `detail` carries
// the human-readable numbers.
struct CheckResult {
  int criterion = 0; // 1..11, groups related checks
  std::string name;
  double value = 0;
  double threshold = 0;
  bool pass = false;
  std::string detail;
};

// Runs the full suite. `threads` caps the optimizer's worker pool
// (0 = hardware concurrency). Several checks take seconds to minutes;
// everything is deterministic for a fixed build.
std::vector<CheckResult> run_verification(int threads = 0);

// criterion,name,value,threshold,pass,detail
std::string verification_csv(const std::vector<CheckResult> &results);

} // namespace iontrap
