#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mrate/error.hpp"

namespace mrate::cli {

// Process exit status for each error class. 0 is success, 1 an unexpected
// internal failure.
int exit_code(ErrorCode code) noexcept;

// Runs one subcommand. args excludes the program name. Reports go to --out
// or to `out`; errors go to `err` as a JSON object.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mrate::cli
