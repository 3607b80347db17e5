// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "selftrain/cli.hpp"

int main(int argc, char **argv) {
  return selftrain::run_cli(argc, argv, std::cout, std::cerr);
}
