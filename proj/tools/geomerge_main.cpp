#include <iostream>

#include "geomerge/cli.hpp"

int main(int argc, char** argv) { return geomerge::cli::run(argc, argv, std::cout, std::cerr); }
