// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "icao/cli.hpp"

int main(int argc, char** argv) {
  return icao::dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr).exit_code;
}
