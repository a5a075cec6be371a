#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ldiff::harness {

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestReport {
  std::vector<SelftestCheck> checks;
  int passed() const;
  bool ok() const { return passed() == static_cast<int>(checks.size()); }
};

/// Fast consistency suite: OU coefficients, time-grid invariants, the three
/// independent score oracles against each other, DSM gradients against finite
/// differences, and the exact paired-neuron linear net. A few seconds on one
/// core. One line per check goes to `log`.
SelftestReport RunSelftest(std::ostream& log);

}  // namespace ldiff::harness
