#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stagehand::cli {

enum ExitCode : int { kOk = 0, kFindings = 1, kUsage = 2, kRuntime = 3 };

/// Runs one command line (without the program name). Output goes to `out`,
/// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stagehand::cli
