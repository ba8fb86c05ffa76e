#pragma once

// Command-line front end. `run` takes the arguments after the program name
// and returns the process exit code, so tests can drive it in-process.

#include <ostream>
#include <string>
#include <vector>

namespace v2xcalib::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,    // bad flags or config
  kData = 2,     // missing, corrupt or conflicting files
  kNumeric = 3,  // non-finite loss or degenerate estimate
};

/// Consulted when --config is not given. Unset means built-in defaults.
inline constexpr const char* kConfigEnv = "V2XCALIB_CONFIG";

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace v2xcalib::cli
