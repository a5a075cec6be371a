#include <iostream>

#include "ldiff/harness/cli.hpp"

int main(int argc, char** argv) { return ldiff::harness::RunCli(argc, argv, std::cout, std::cerr); }
