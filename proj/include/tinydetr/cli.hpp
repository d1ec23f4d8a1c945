#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tinydetr {

// Routes one command-line invocation (without the program name) to the
// matching subcommand. Exit codes: 0 success, 1 usage error, 2 bad input
// data, 3 numeric failure.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tinydetr
