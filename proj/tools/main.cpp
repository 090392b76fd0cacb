#include <iostream>

#include "mieval/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mieval::cli::run(args, std::cout, std::cerr);
}
