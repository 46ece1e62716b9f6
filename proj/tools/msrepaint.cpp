#include <iostream>

#include "msrepaint/cli.hpp"

int main(int argc, char** argv) { return msrepaint::cli::run(argc, argv, std::cout, std::cerr); }
