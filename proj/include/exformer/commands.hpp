#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace exformer {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitShape = 5;

// Runs one command line (args[0] is the program name) and returns the exit
// code. Errors are reported on `err`, never thrown.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace exformer
