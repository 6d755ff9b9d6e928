// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return xspec::run_cli(argc, argv, std::cout, std::cerr); }
