#include <iostream>

#include "tvprobe/cli.hpp"

int main(int argc, char** argv) { return tvp::run_cli(argc, argv, std::cout, std::cerr); }
