#include <iostream>

#include "refsr/cli.hpp"

int main(int argc, char** argv) {
  return refsr::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
