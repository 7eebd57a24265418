#pragma once

#include <iosfwd>

namespace photonloop::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point of the `photonloop` tool: subcommands simulate, analyze,
/// fit and calibrate. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace photonloop::cli
