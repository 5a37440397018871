#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace schedopt {

/// Runs one subcommand. `args` excludes the program name. The run directory path is printed
/// on `out`; diagnostics go to `err`. Returns 0 on success, 1 on validation or usage errors,
/// 2 on runtime failures.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace schedopt
