#include <iostream>

#include "tscuap/runner.hpp"

int main(int argc, char** argv) {
    tscuap::cli::install_signal_handlers();
    return tscuap::cli::run(argc, argv, std::cout, std::cerr);
}
