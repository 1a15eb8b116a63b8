#include <iostream>
#include <string>
#include <vector>

#include "mrate/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mrate::cli::run(args, std::cout, std::cerr);
}
