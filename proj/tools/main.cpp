#include <iostream>

#include "hubrouter/cli.hpp"

int main(int argc, char** argv) { return hubrouter::cli::run(argc, argv, std::cout, std::cerr); }
