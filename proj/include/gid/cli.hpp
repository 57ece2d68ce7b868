#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gid::cli {

/// Runs one command line (without the program name). Returns the process
/// exit code: 0 success, 1 runtime or data error, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gid::cli
