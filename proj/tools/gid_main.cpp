#include <iostream>

#include "gid/cli.hpp"

int main(int argc, char** argv) {
    return gid::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
