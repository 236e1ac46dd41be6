// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
int main() { std::puts("pending"); return 1; }
