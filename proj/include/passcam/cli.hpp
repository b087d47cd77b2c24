#pragma once

#include <ostream>

namespace passcam {

/// Exit codes of the `passcam` command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one CLI invocation in-process. Messages go to `out`, diagnostics and
/// usage text to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace passcam
