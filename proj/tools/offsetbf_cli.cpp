#include "offsetbf/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return offsetbf::run_cli(argc, argv, std::cout, std::cerr); }
