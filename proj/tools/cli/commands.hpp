#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace scalerl::cli {

enum ExitCode : int { kOk = 0, kInputError = 2, kNumericFailure = 3, kInstability = 4 };

/// Runs one `scalerl` invocation; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scalerl::cli
