#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return posefree::cli::run(argc, argv, std::cout, std::cerr); }
