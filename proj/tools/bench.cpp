#include <iostream>

#include "bbp/bench/cli.hpp"

int main(int argc, char** argv) { return bbp::bench::bench_main(argc, argv, std::cout, std::cerr); }
