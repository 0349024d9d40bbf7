#include <iostream>
#include <string>
#include <vector>

#include "uqh/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return uqh::run_cli(args, std::cout, std::cerr);
}
