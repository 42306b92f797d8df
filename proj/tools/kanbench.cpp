#include <iostream>

#include "kanbench/cli.hpp"

int main(int argc, char** argv) { return kanbench::dispatch(argc, argv, std::cout, std::cerr); }
