#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dropclass {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitDomainError = 1, kExitUsage = 2 };

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace dropclass
