// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace mnsp {

// Built-in 5x7 bitmap font covering [0-9a-z]. Each glyph is 7 rows; bit 4
// (MSB of the low five bits) is the leftmost column.
inline constexpr size_t kGlyphWidth = 5;
inline constexpr size_t kGlyphHeight = 7;

bool font_supports(char c);

// Rows of the glyph for `c`. Throws InputError for unsupported characters.
const std::array<uint8_t, kGlyphHeight>& glyph5x7(char c);

}  // namespace mnsp
