#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mcbp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (argv[0] is the program name). Reports and
/// messages go to `out`; diagnostics go to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience overload for tests: args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "a..b" (inclusive) or a single integer.
std::vector<int> parse_range(const std::string& text);

}  // namespace mcbp::cli
