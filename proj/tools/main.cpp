#include <iostream>
#include <string>
#include <vector>

#include "tinydetr/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return tinydetr::dispatch(args, std::cout, std::cerr);
}
