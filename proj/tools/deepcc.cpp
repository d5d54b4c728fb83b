#include <iostream>
#include <string>
#include <vector>

#include "deepcc/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return deepcc::run_cli(args, std::cout, std::cerr);
}
