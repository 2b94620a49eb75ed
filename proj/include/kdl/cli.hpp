#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kdl::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kDiverged = 3 };

// Runs one command. args excludes the program name. Results go to out,
// diagnostics (prefixed "error:" / "warning:") to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kdl::cli
