// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Command line entry point. Subcommand wiring lives in gbmbench/cli.hpp so it
// stays testable; this translation unit only owns main().

#include <cstdio>
#include <exception>

int main(int argc, char** argv) {
    (void)argc;
    (void)argv;
    std::fprintf(stderr, "gbmbench: CLI not wired yet\n");
    return 2;
}
