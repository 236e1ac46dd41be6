// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mnsp/image.hpp"
#include "mnsp/scales.hpp"
#include "mnsp/synth.hpp"

namespace mnsp {

// Per-sample RNG stream: order-independent mix of the run seed and the
// sample's index (splitmix-style finalizer).
inline uint64_t derive_seed(uint64_t global_seed, uint64_t index) {
  uint64_t z = global_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic shuffle of [0, n) for one epoch.
std::vector<size_t> epoch_order(size_t n, uint64_t seed, size_t epoch);

// Random subset of {brightness/contrast jitter <=20%, Gaussian blur sigma<=1,
// rotation <=10 degrees, additive noise sigma<=0.05}; identity when disabled.
// Output stays in [0,1].
Image augment(const Image& img, Rng& rng, bool enabled);

// Zoomed view at `target`: when enabled, a random crop covering 60-90% of
// each dimension (kept inside the frame) is resized to the target scale;
// when disabled, a plain resize (identity if the size already matches).
Image zoom_in(const Image& img, Rng& rng, bool enabled, const ScaleSpec& target);

struct ViewBundle {
  Image view_small;   // at s_k, augmented when enabled
  Image view_large;   // at s_{k+1}, independent augmentation draw
  Image view_masked;  // at the top scale; pixels identical to target_view
  Image target_view;  // clean counterpart of view_masked
  MaskPattern mask;   // over the top-scale token grid
  ScaleSpec s_small, s_large, s_mask;
  size_t pair_index = 1;  // k in {1,2,3}
};

// The three training views of one sample: adjacent-pair resizes plus the
// zoomed masked view with its token mask.
ViewBundle build_views(const TextSample& sample, const ScaleSequence& seq,
                       double mask_ratio, Rng& rng, bool augment_on, bool zoom_on);

struct IngestResult {
  std::vector<TextSample> samples;
  size_t skipped = 0;
};

// Reads a folder of PGM/PPM images. If `<dir>/<manifest>` exists it drives
// the listing (`filename<TAB>label` per line, label optional); otherwise the
// directory is scanned in sorted order (labels empty). Unreadable or
// unsupported files are skipped and counted. Labels are lowercased;
// out-of-charset labels are an input error when labels are required.
IngestResult ingest_folder(const std::string& dir, const std::string& manifest,
                           bool labels_required);

// Writes samples as PGM files plus a manifest, the inverse of ingest_folder.
void write_corpus(const std::string& dir, const std::string& manifest,
                  const std::vector<TextSample>& samples);

}  // namespace mnsp
