#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace funnel::cli {

enum ExitCode : int {
  kSuccess = 0,
  kConfigError = 1,
  kDataError = 2,
  kNumericalFailure = 3,
  kGradcheckFailure = 4,
};

// Entry point shared by the executable and the tests. `args` excludes the
// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace funnel::cli
