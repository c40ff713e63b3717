#include <iostream>

#include "rawicl/cli.hpp"

int main(int argc, char** argv) { return rawicl::run_cli(argc, argv, std::cout, std::cerr); }
