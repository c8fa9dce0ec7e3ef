#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace clvq::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsage = 1,
  kData = 2,
  kNumeric = 3,
};

/// Method tags accepted by --method, in report order.
const std::vector<std::string>& method_tags();

/// Runs one `clvq` invocation. `args` excludes the program name. The resolved
/// configuration and reports go to `out`; diagnostics go to the log (stderr).
int run(const std::vector<std::string>& args, std::ostream& out);

}  // namespace clvq::cli
