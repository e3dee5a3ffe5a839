#include <iostream>

#include "mapo/cli/commands.hpp"

int main(int argc, char** argv) { return mapo::cli::run_cli(argc, argv, std::cout, std::cerr); }
