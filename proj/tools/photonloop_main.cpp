#include <iostream>

#include "photonloop/cli.hpp"

int main(int argc, char** argv) { return photonloop::cli::run(argc, argv, std::cout, std::cerr); }
