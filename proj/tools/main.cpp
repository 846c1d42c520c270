#include <iostream>

#include "wsonar/cli.hpp"

int main(int argc, char** argv) { return wsonar::run_cli(argc, argv, std::cout, std::cerr); }
