// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/cli.hpp"

int main(int argc, char** argv) { return bb::cli::main(argc, argv); }
