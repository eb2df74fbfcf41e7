#pragma once

#include <string>
#include <vector>

namespace fairdec {

// Runs one CLI invocation; args excludes the program name.
// Returns 0 on success, 1 on runtime failure, 2 on config or validation failure.
int run_cli(const std::vector<std::string>& args);

}
