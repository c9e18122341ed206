// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/cli.hpp"
#include "occfield/runtime.hpp"

#include <iostream>

int main(int argc, char** argv) {
    occ::configure_allocator();
    return occ::cli::run(argc, argv, std::cout, std::cerr);
}
