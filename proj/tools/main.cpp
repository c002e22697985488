#include <iostream>

#include "qsync/cli.hpp"

int main(int argc, char** argv) { return qsync::cli_main(argc, argv, std::cout, std::cerr); }
