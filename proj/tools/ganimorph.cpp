#include <iostream>
#include <string>
#include <vector>

#include "ganimorph/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ganimorph::cli::run_cli(args, std::cout, std::cerr);
}
