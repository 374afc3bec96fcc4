#pragma once

#include <string>
#include <vector>

namespace xsum::cli {

// Subcommand dispatcher. Exit codes: 0 success, 1 runtime failure,
// 2 usage/config error.
int run(const std::vector<std::string>& args);

}  // namespace xsum::cli
