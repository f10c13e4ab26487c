#include <iostream>
#include <string>
#include <vector>

#include "sqgen/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return sqgen::cli::run(args, std::cout, std::cerr);
}
