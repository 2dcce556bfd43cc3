#include <iostream>
#include <string>
#include <vector>

#include "instyle/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return instyle::run_cli(args, std::cout, std::cerr);
}
