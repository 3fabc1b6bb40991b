#pragma once

#include <string>
#include <vector>

namespace levyfilter::cli {

/// Entry point of the `levyfilter` tool. Exit codes: 0 success, 1 configuration
/// or usage error, 2 numerical failure.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace levyfilter::cli
