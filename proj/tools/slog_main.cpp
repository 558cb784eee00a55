#include <iostream>
#include <string>
#include <vector>

#include "slog/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return slog::cli_dispatch(args, std::cout, std::cerr);
}
