#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace deepcc {

// Entry point of the `deepcc` tool. Returns the process exit code; usage and
// runtime errors go to `err` with a nonzero code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace deepcc
