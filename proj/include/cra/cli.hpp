#pragma once

#include <string>
#include <vector>

namespace cra {

// Full command-line entry point. `args` excludes the program name. Returns
// the process exit code; all errors are reported on stderr, never thrown.
int run_cli(std::vector<std::string> args);

}  // namespace cra
