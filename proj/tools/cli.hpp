#pragma once

#include <iosfwd>

namespace psfa::cli {

enum ExitCode { kOk = 0, kConfigError = 1, kNumericError = 2, kIoError = 3 };

/// Parses argv and runs one subcommand. Messages go to `out` / `err`.
int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace psfa::cli
