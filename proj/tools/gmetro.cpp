#include "gmetro/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return gmetro::run_cli(args, std::cout, std::cerr);
}
