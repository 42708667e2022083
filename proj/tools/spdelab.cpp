#include <iostream>
#include <string>
#include <vector>

#include "spdelab/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return spdelab::cli::run(args, std::cout, std::cerr);
}
