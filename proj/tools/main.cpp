#include <iostream>
#include <string>
#include <vector>

#include "exformer/commands.hpp"

int main(int argc, char** argv) {
  return exformer::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
