#include <iostream>
#include <string>
#include <vector>

#include "mmzi/cli.h"

int main(int argc, char **argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mmzi::run_cli(args, std::cout, std::cerr);
}
