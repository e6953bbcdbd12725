#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "expres/errors.hpp"

namespace expres {

// 0 success, 2 config/contract/shape, 3 numeric, 4 I/O or format, 1 anything else.
int exit_code(ErrorKind kind);

// Runs one command line (args exclude the program name). Tables go to `out`;
// failures print one JSON object {"error", "message", "violations"} to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace expres
