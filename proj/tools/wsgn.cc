#include <iostream>

#include "wsgn/cli.h"

int main(int argc, char** argv) { return wsgn::run_cli(argc, argv, std::cout, std::cerr); }
