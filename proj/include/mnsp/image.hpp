// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "mnsp/array.hpp"
#include "mnsp/common.hpp"

namespace mnsp {

// Pixel raster in [0,1], interleaved channels (h x w x c), double precision
// throughout the data pipeline so that view construction is bit-stable no
// matter which kernel backend trains on the result.
struct Image {
  size_t h = 0, w = 0, c = 1;
  std::vector<double> px;

  Image() = default;
  Image(size_t h_, size_t w_, size_t c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), px(h_ * w_ * c_, fill) {}

  double& at(size_t r, size_t col, size_t ch = 0) { return px[(r * w + col) * c + ch]; }
  double at(size_t r, size_t col, size_t ch = 0) const { return px[(r * w + col) * c + ch]; }
  size_t size() const { return px.size(); }
  bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

// --- geometry ---------------------------------------------------------------

// Separable cubic-convolution resize (Keys a=-0.5, half-pixel centers,
// clamp-to-edge), output clamped back to [0,1]. Same-size resize is an exact
// copy (unit taps), which the shrink-pad factor-1.0 identity relies on.
Image resize_bicubic(const Image& src, size_t oh, size_t ow);

Image crop(const Image& src, size_t top, size_t left, size_t ch, size_t cw);

// Rotate about the image center by `degrees`, bilinear inverse mapping,
// out-of-frame samples read as `bg`.
Image rotate(const Image& src, double degrees, double bg);

// --- photometric ------------------------------------------------------------

Image gaussian_blur(const Image& src, double sigma);
Image adjust_brightness_contrast(const Image& src, double brightness, double contrast);
Image add_gaussian_noise(const Image& src, double sigma, Rng& rng);
void clamp01(Image& img);

// --- tokenization helpers ----------------------------------------------------

// Non-overlapping p x p patches, row-major over the grid; each row of the
// result is one flattened patch (pixel-major, channel-minor), width p*p*c.
Array<double> patchify(const Image& img, size_t patch);

// Per-row standardization to zero mean / unit variance (eps inside the sqrt);
// used for pixel-space regression targets.
Array<double> standardize_rows(const Array<double>& x, double eps);

// --- file I/O -----------------------------------------------------------------

// 8-bit binary PGM (P5, c=1) / PPM (P6, c=3), header exactly
// "P5\n<w> <h>\n255\n". Values scaled by 255 and rounded.
void write_pnm(const std::string& path, const Image& img);
Image read_pnm(const std::string& path);

}  // namespace mnsp
