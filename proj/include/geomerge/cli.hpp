#pragma once

#include <iosfwd>
#include <string_view>
#include <vector>

namespace geomerge::cli {

/// Entry point shared by the executable and the tests. Returns the process
/// exit code: 0 ok, 2 validation, 3 numeric, 4 I/O.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// "0:1:0.25" (inclusive range) or "0,0.6,1".
std::vector<double> parse_lambdas(std::string_view text);

}  // namespace geomerge::cli
