#pragma once

#include <string>
#include <vector>

namespace cacc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // bad flag or config
inline constexpr int kExitRuntime = 2;  // data, I/O or numeric failure

/// Entry point shared by the `cacc` binary and the tests. `args` excludes
/// the program name.
int run(const std::vector<std::string>& args);

}  // namespace cacc::cli
