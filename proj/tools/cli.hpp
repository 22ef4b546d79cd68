#pragma once

#include <iosfwd>

namespace coad::cli {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kRuntime = 4 };

// Runs the `coad` command line. Interactive input is read from `in`, results
// go to `out` and diagnostics to `err`.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace coad::cli
