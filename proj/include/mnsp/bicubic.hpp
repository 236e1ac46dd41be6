// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mnsp/common.hpp"

namespace mnsp {

// Cubic convolution resampling (Keys kernel, a = -0.5) with half-pixel sample
// centers: source position of output i is (i + 0.5) * n_in / n_out - 0.5.
// Out-of-range taps clamp to the edge sample. The same taps drive both pixel
// resizing and token-grid upsampling, so the two stay in exact agreement.

struct Taps1D {
  // For each output index: 4 source indices (clamped) and 4 weights.
  std::vector<int> idx;     // 4 * n_out
  std::vector<double> w;    // 4 * n_out
  size_t n_out = 0;
};

inline double cubic_keys(double x) {
  x = std::abs(x);
  if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

inline Taps1D bicubic_taps(size_t n_in, size_t n_out) {
  if (n_in == 0 || n_out == 0) throw ContractError("bicubic_taps: empty axis");
  Taps1D t;
  t.n_out = n_out;
  t.idx.resize(4 * n_out);
  t.w.resize(4 * n_out);
  const double scale = double(n_in) / double(n_out);
  for (size_t o = 0; o < n_out; ++o) {
    double src = (double(o) + 0.5) * scale - 0.5;
    double base = std::floor(src);
    double frac = src - base;
    for (int k = 0; k < 4; ++k) {
      int j = int(base) + k - 1;
      if (j < 0) j = 0;
      if (j >= int(n_in)) j = int(n_in) - 1;
      t.idx[4 * o + k] = j;
      t.w[4 * o + k] = cubic_keys(frac - double(k - 1));
    }
    // The four Keys weights already sum to 1 analytically; renormalize anyway
    // so edge-clamped rows cannot drift.
    double s = t.w[4 * o] + t.w[4 * o + 1] + t.w[4 * o + 2] + t.w[4 * o + 3];
    for (int k = 0; k < 4; ++k) t.w[4 * o + k] /= s;
  }
  return t;
}

}  // namespace mnsp
