#include <vector>

#include "merge/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return merge::cli::run_cli(std::move(args));
}
