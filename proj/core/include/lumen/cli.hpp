#pragma once

#include <string>
#include <vector>

namespace lumen::cli {

/// Runs the `lumen` command line. Returns the process exit status: 0 on
/// success, 1 with a one-line diagnostic on stderr for pipeline errors, and
/// CLI11's usage-error status for bad flags.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace lumen::cli
