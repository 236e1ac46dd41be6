// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "mnsp/synth.hpp"

#include <algorithm>
#include <cmath>

#include "mnsp/font5x7.hpp"

namespace mnsp {

namespace {

// Axis-aligned bounds of a box after rotating the image about its center,
// clamped to the frame.
Box rotate_box(const Box& b, double degrees, size_t h, size_t w) {
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cy = 0.5 * double(h), cx = 0.5 * double(w);
  const double cs = std::cos(rad), sn = std::sin(rad);
  double ys[4], xs[4];
  const double corners[4][2] = {{double(b.top), double(b.left)},
                                {double(b.top), double(b.right)},
                                {double(b.bottom), double(b.left)},
                                {double(b.bottom), double(b.right)}};
  for (int i = 0; i < 4; ++i) {
    const double dy = corners[i][0] - cy, dx = corners[i][1] - cx;
    ys[i] = cy + cs * dy + sn * dx;
    xs[i] = cx + cs * dx - sn * dy;
  }
  const double y0 = *std::min_element(ys, ys + 4), y1 = *std::max_element(ys, ys + 4);
  const double x0 = *std::min_element(xs, xs + 4), x1 = *std::max_element(xs, xs + 4);
  Box out;
  out.top = size_t(std::max(0.0, std::floor(y0)));
  out.left = size_t(std::max(0.0, std::floor(x0)));
  out.bottom = std::min(h, size_t(std::max(0.0, std::ceil(y1))));
  out.right = std::min(w, size_t(std::max(0.0, std::ceil(x1))));
  return out;
}

}  // namespace

std::string random_label(Rng& rng, size_t min_len, size_t max_len) {
  static const char cs[] = "0123456789abcdefghijklmnopqrstuvwxyz";
  if (min_len == 0 || max_len < min_len || max_len > kMaxLabelLength)
    throw ConfigError("random_label: bad length range");
  const size_t n = min_len + size_t(rng.uniform_int(max_len - min_len + 1));
  std::string s(n, '0');
  for (auto& ch : s) ch = cs[rng.uniform_int(36)];
  return s;
}

TextSample render_synthetic(const std::string& text, uint64_t seed,
                            const SynthStyle& style) {
  if (text.empty() || text.size() > kMaxLabelLength)
    throw InputError("render_synthetic: label length must be in [1, 25]");
  for (char ch : text)
    if (!font_supports(ch))
      throw InputError(std::string("render_synthetic: unsupported character: ") + ch);
  if (style.glyph_scale_min < 1 || style.glyph_scale_max < style.glyph_scale_min)
    throw ConfigError("render_synthetic: bad glyph scale range");

  Rng rng(seed);
  const size_t s = size_t(style.glyph_scale_min) +
                   size_t(rng.uniform_int(
                       uint64_t(style.glyph_scale_max - style.glyph_scale_min) + 1));
  const double bg = rng.uniform(style.bg_min, style.bg_max);
  const double fg = rng.uniform(style.fg_min, style.fg_max);
  const double rot = rng.uniform(-style.rotation_deg, style.rotation_deg);
  const double noise_sigma = rng.uniform(0.0, style.noise_sigma_max);
  const size_t out_h = style.out_h_min +
                       size_t(rng.uniform_int(style.out_h_max - style.out_h_min + 1));
  const size_t out_w = style.out_w_min +
                       size_t(rng.uniform_int(style.out_w_max - style.out_w_min + 1));

  // canvas: glyphs at scale s, 1-glyph-pixel spacing, 2-glyph-pixel margins
  const size_t gw = kGlyphWidth * s, gh = kGlyphHeight * s, gap = s, margin = 2 * s;
  const size_t text_w = text.size() * gw + (text.size() - 1) * gap;
  Image canvas(gh + 2 * margin, text_w + 2 * margin, 1, bg);

  Box box;
  box.top = margin;
  box.bottom = margin + gh;
  box.left = margin;
  box.right = margin + text_w;
  size_t x = margin;
  for (char ch : text) {
    const auto& rows = glyph5x7(ch);
    for (size_t gy = 0; gy < kGlyphHeight; ++gy)
      for (size_t gx = 0; gx < kGlyphWidth; ++gx)
        if (rows[gy] & (0b10000 >> gx))
          for (size_t dy = 0; dy < s; ++dy)
            for (size_t dx = 0; dx < s; ++dx)
              canvas.at(margin + gy * s + dy, x + gx * s + dx) = fg;
    x += gw + gap;
  }

  Image rotated = rotate(canvas, rot, bg);
  Box rbox = rotate_box(box, rot, canvas.h, canvas.w);

  Image noisy = add_gaussian_noise(rotated, noise_sigma, rng);
  clamp01(noisy);

  Image final_img = resize_bicubic(noisy, out_h, out_w);
  const double fy = double(out_h) / double(noisy.h);
  const double fx = double(out_w) / double(noisy.w);

  TextSample sample;
  sample.image = std::move(final_img);
  sample.label = text;
  sample.text_box.top = std::min(out_h, size_t(std::floor(double(rbox.top) * fy)));
  sample.text_box.bottom = std::min(out_h, size_t(std::ceil(double(rbox.bottom) * fy)));
  sample.text_box.left = std::min(out_w, size_t(std::floor(double(rbox.left) * fx)));
  sample.text_box.right = std::min(out_w, size_t(std::ceil(double(rbox.right) * fx)));
  sample.source_h = out_h;
  sample.source_w = out_w;
  return sample;
}

}  // namespace mnsp
