#pragma once

// The `ccic` command line: generate-history, train, run, replay.

#include <iosfwd>
#include <string>
#include <vector>

namespace ccic::cli {

/// Exit codes: 0 success (for `run`, every expected event passed),
/// 1 run finished with failed expectations, 2 usage or configuration error.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ccic::cli
