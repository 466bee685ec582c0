#include <iostream>

#include "miis/harness/cli.hpp"

int main(int argc, char** argv) { return miis::harness::cli_main(argc, argv, std::cout, std::cerr); }
