#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dcl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

/// Entry point shared by the `dcl` binary and the tests. `args` excludes
/// the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcl::cli
