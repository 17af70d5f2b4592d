#pragma once

#include <string>
#include <vector>

namespace latent_steer {

// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

// args excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace latent_steer
