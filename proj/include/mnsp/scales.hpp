// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "mnsp/array.hpp"
#include "mnsp/common.hpp"

namespace mnsp {

// One working resolution plus its patch grid.
struct ScaleSpec {
  size_t height = 0;
  size_t width = 0;
  size_t patch = 4;

  void validate() const {
    if (patch == 0 || height == 0 || width == 0) throw ConfigError("scale: zero dimension");
    if (height % patch != 0 || width % patch != 0)
      throw ConfigError("scale " + std::to_string(height) + "x" + std::to_string(width) +
                        ": not divisible by patch " + std::to_string(patch));
  }
  GridShape grid() const { return GridShape{height / patch, width / patch}; }
  size_t token_count() const { return grid().count(); }
  bool operator==(const ScaleSpec& o) const {
    return height == o.height && width == o.width && patch == o.patch;
  }
};

// The geometric resolution ladder s1..s4; adjacent entries double both sides.
struct ScaleSequence {
  std::vector<ScaleSpec> scales;  // index 0 = s1 ... index 3 = s4

  static ScaleSequence default_sequence() { return from_top(32, 128, 4); }

  // Build by halving down from the top scale (s4).
  static ScaleSequence from_top(size_t h4, size_t w4, size_t patch) {
    ScaleSequence seq;
    seq.scales.resize(4);
    for (int i = 3; i >= 0; --i) {
      seq.scales[i] = ScaleSpec{h4, w4, patch};
      h4 /= 2;
      w4 /= 2;
    }
    seq.validate();
    return seq;
  }

  void validate() const {
    if (scales.size() != 4) throw ConfigError("scale sequence must have exactly 4 entries");
    for (const auto& s : scales) s.validate();
    for (size_t i = 0; i + 1 < scales.size(); ++i) {
      if (scales[i + 1].height != 2 * scales[i].height ||
          scales[i + 1].width != 2 * scales[i].width)
        throw ConfigError("scale sequence: adjacent scales must double both dimensions");
      if (scales[i + 1].patch != scales[i].patch)
        throw ConfigError("scale sequence: patch size must be uniform");
    }
  }

  const ScaleSpec& s(size_t k) const {  // 1-based, s(4) = top
    if (k < 1 || k > scales.size()) throw ContractError("scale index out of range");
    return scales[k - 1];
  }
  const ScaleSpec& top() const { return scales.back(); }
};

// Adjacent pair (s_k, s_{k+1}), k uniform over {1,2,3}.
struct ScalePair {
  size_t k = 1;  // 1-based index of the smaller scale
  ScaleSpec small;
  ScaleSpec large;
};

inline ScalePair sample_scale_pair(const ScaleSequence& seq, Rng& rng) {
  size_t k = 1 + size_t(rng.uniform_int(3));
  return ScalePair{k, seq.s(k), seq.s(k + 1)};
}

// Token mask over a patch grid; true = masked.
struct MaskPattern {
  std::vector<char> flags;
  double ratio = 0.0;

  size_t masked_count() const {
    size_t n = 0;
    for (char f : flags) n += (f != 0);
    return n;
  }
  std::vector<size_t> masked_indices() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < flags.size(); ++i)
      if (flags[i]) out.push_back(i);
    return out;
  }
  std::vector<size_t> visible_indices() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < flags.size(); ++i)
      if (!flags[i]) out.push_back(i);
    return out;
  }
};

// Exactly ceil(ratio * n_tokens) positions masked, uniformly without
// replacement (partial Fisher-Yates over an index vector).
inline MaskPattern random_mask(size_t n_tokens, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must be in (0,1)");
  if (n_tokens == 0) throw ConfigError("random_mask: no tokens");
  const size_t m = ceil_fraction(ratio, n_tokens);
  std::vector<size_t> idx(n_tokens);
  for (size_t i = 0; i < n_tokens; ++i) idx[i] = i;
  MaskPattern p;
  p.ratio = ratio;
  p.flags.assign(n_tokens, 0);
  for (size_t i = 0; i < m; ++i) {
    size_t j = i + size_t(rng.uniform_int(n_tokens - i));
    std::swap(idx[i], idx[j]);
    p.flags[idx[i]] = 1;
  }
  return p;
}

}  // namespace mnsp
