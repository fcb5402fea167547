#include <iostream>
#include <string>
#include <vector>

#include "rhrn/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return rhrn::run_cli(args, std::cout, std::cerr);
}
