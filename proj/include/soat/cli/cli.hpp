#pragma once

#include <string>
#include <vector>

namespace soat::cli {

// Runs one CLI invocation (args exclude the program name) and returns the
// process exit code. Commands: gen-env, train, eval, ablate, verify.
int run(const std::vector<std::string>& args);

}  // namespace soat::cli
