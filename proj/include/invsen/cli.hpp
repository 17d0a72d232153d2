#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace invsen::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2, kDivergence = 3 };

/// Runs one command line (without the program name). Everything the command
/// prints goes to `out` and `err`; files are written with temp-and-rename.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// 0.7853 -> "78.53"
std::string format_percent(double fraction);

}  // namespace invsen::cli
