#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rhrn {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitValidation = 2,
  kExitIncompatible = 3,
  kExitNumeric = 4,
};

/// Entry point of the `rhrn` tool. args[0] is the program name. Normal output
/// goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rhrn
