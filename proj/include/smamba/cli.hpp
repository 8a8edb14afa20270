#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace smamba::cli {

enum ExitCode : int { kOk = 0, kInvariant = 1, kUsage = 2, kIo = 3 };

// Parses `args` (without the program name) and runs one subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace smamba::cli
