#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stainkit::cli {

// Runs one invocation (args exclude the program name) and returns the
// process exit code: 0 success, 1 validation/runtime failure, 2 usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);

}  // namespace stainkit::cli
