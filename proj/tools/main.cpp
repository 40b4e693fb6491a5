#include <iostream>
#include <string>
#include <vector>

#include "varnn/experiment.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return varnn::run_cli(args, std::cout, std::cerr);
}
