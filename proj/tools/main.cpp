#include "entity_refine/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return entity_refine::run_cli(args, std::cout, std::cerr);
}
