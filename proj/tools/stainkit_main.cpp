#include <iostream>
#include <string>
#include <vector>

#include "stainkit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return stainkit::cli::dispatch(args, std::cout, std::cerr);
}
