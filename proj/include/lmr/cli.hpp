#pragma once
#include <string>
#include <vector>

namespace lmr {

// Full command-line entry point; returns the process exit code
// (0 ok, 1 usage error, 2 data error, 3 numeric error).
int cli_main(const std::vector<std::string>& args);

}  // namespace lmr
