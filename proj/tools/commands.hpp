#pragma once

#include <iosfwd>

namespace mtsct::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumerical = 4 };

/// Parses argv and runs one command. Never throws; failures map onto ExitCode.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mtsct::cli
