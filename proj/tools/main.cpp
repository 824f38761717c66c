#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return mcbp::cli::dispatch(argc, argv, std::cout, std::cerr); }
