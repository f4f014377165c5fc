#include <iostream>
#include <string>
#include <vector>

#include "diffseg_cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return diffseg::cli::run(args, std::cout, std::cerr);
}
