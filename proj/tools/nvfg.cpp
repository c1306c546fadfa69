#include <iostream>

#include "nvfg/commands.hpp"

int main(int argc, char** argv) {
    return nvfg::run_cli(argc, argv, std::cout, std::cerr);
}
