#include <iostream>

#include "msam/cli.hpp"

int main(int argc, char** argv) { return msam::cli(argc, argv, std::cout, std::cerr); }
