#include <iostream>

#include "smre/cli.hpp"

int main(int argc, char** argv) { return smre::run_cli(argc, argv, std::cout, std::cerr); }
