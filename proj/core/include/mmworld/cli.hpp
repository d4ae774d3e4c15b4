#pragma once

#include <string>
#include <vector>

namespace mmw {

/// Dispatches one subcommand (argv without the program name). Returns the
/// process exit code; failures print a single machine-parseable line
/// ("error: ...") to stderr and return nonzero.
int run_cli(const std::vector<std::string>& args);

}  // namespace mmw
