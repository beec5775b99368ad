#include <iostream>

#include "cif/cli.h"

int main(int argc, char** argv) { return cif::run_cli(argc, argv, std::cout, std::cerr); }
