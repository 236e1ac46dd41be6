// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "mnsp/common.hpp"
#include "mnsp/image.hpp"

namespace mnsp {

// Pixel box, top/left inclusive, bottom/right exclusive.
struct Box {
  size_t top = 0, left = 0, bottom = 0, right = 0;
  size_t height() const { return bottom - top; }
  size_t width() const { return right - left; }
  bool empty() const { return bottom <= top || right <= left; }
};

struct TextSample {
  Image image;  // [0,1]
  std::string label;
  Box text_box;           // tight text bounds in image coordinates
  size_t source_h = 0;    // dimensions before any pipeline resize
  size_t source_w = 0;
};

inline constexpr size_t kMaxLabelLength = 25;

// Style ranges for the dependency-free renderer. All draws are uniform.
struct SynthStyle {
  int glyph_scale_min = 1;       // integer pixel multiplier of the 5x7 font
  int glyph_scale_max = 4;
  double rotation_deg = 15.0;    // rotation drawn from [-rotation_deg, +rotation_deg]
  double fg_min = 0.75, fg_max = 1.0;
  double bg_min = 0.0, bg_max = 0.25;
  double noise_sigma_max = 0.1;  // additive Gaussian noise, sigma in [0, max]
  size_t out_h_min = 24, out_h_max = 48;   // randomized output size
  size_t out_w_min = 96, out_w_max = 192;
};

// Renders `text` with the built-in 5x7 font: scaled glyph stamping, tight
// box tracking, rotation, additive noise, resize to a randomized size.
// Deterministic given (text, seed, style).
TextSample render_synthetic(const std::string& text, uint64_t seed,
                            const SynthStyle& style = SynthStyle{});

// Uniformly random label of length [min_len, max_len] over [0-9a-z].
std::string random_label(Rng& rng, size_t min_len, size_t max_len);

}  // namespace mnsp
