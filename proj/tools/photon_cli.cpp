#include <iostream>

#include "photon/cli.h"

int main(int argc, char** argv) {
  return photon::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
