#include <iostream>

#include "covidnet/cli/cli.hpp"

int main(int argc, char** argv) { return covidnet::cli::run(argc, argv, std::cout, std::cerr); }
