#pragma once

#include <ostream>

namespace ldiff::harness {

enum ExitCode : int {
  kExitOk = 0,
  kExitRuntime = 1,
  kExitUsage = 2,
  kExitConfig = 3,
};

/// Entry point of the `ldiff` tool. Subcommands: generate, train, sample,
/// evaluate, sweep, report, selftest.
int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ldiff::harness
