#include <iostream>

#include "gen3d/cli.hpp"

int main(int argc, char** argv) { return gen3d::dispatch(argc, argv, std::cout, std::cerr); }
