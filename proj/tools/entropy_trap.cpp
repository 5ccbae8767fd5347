#include "entropy_trap/cli.hpp"

int main(int argc, char** argv) {
    return entropy_trap::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
