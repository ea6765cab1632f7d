#include <iostream>

#include "xst/cli/commands.hpp"

int main(int argc, char** argv) {
  return xst::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
