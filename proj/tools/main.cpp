#include <iostream>

#include "flilab/cli.hpp"

int main(int argc, char** argv) {
  return flilab::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
