#include <iostream>

#include "passcam/cli.hpp"

int main(int argc, char** argv) { return passcam::run_cli(argc, argv, std::cout, std::cerr); }
