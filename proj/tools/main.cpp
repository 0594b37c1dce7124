// SPDX-License-Identifier: Apache-2.0
#include "rawnet_cli.hpp"

int main(int argc, char** argv) { return rawnet::cli::run(argc, argv); }
