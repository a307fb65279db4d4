#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kgdg::cli {

/// Runs one invocation. `args` excludes the program name. Machine output goes
/// to `out` (or to --out files), diagnostics to `err`. Returns the exit code:
/// 0 ok, 2 usage/config, 3 data, 4 internal.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kgdg::cli
