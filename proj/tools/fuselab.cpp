#include <iostream>

#include "fuselab/cli.hpp"

int main(int argc, char **argv) { return fuselab::run_cli(argc, argv, std::cout, std::cerr); }
