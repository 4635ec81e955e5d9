#include <iostream>

#include "agln/cli.hpp"

int main(int argc, char** argv) { return agln::run_command(argc, argv, std::cout, std::cerr); }
