#include <iostream>

#include "expres/cli.hpp"

int main(int argc, char** argv) {
  return expres::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
