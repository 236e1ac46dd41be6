// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "mnsp/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace mnsp {

namespace fs = std::filesystem;

std::vector<size_t> epoch_order(size_t n, uint64_t seed, size_t epoch) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  // epoch streams live far from per-sample streams (index space >= 2^32)
  Rng rng(derive_seed(seed, (uint64_t(1) << 32) + epoch));
  for (size_t i = 0; i + 1 < n; ++i) {
    const size_t j = i + size_t(rng.uniform_int(n - i));
    std::swap(order[i], order[j]);
  }
  return order;
}

Image augment(const Image& img, Rng& rng, bool enabled) {
  if (!enabled) return img;
  Image out = img;
  if (rng.uniform() < 0.5) {
    const double b = rng.uniform(-0.2, 0.2);
    const double c = rng.uniform(0.8, 1.2);
    out = adjust_brightness_contrast(out, b, c);
  }
  if (rng.uniform() < 0.5) {
    const double sigma = rng.uniform(0.1, 1.0);
    out = gaussian_blur(out, sigma);
  }
  if (rng.uniform() < 0.5) {
    const double deg = rng.uniform(-10.0, 10.0);
    out = rotate(out, deg, 0.5);
  }
  if (rng.uniform() < 0.5) {
    const double sigma = rng.uniform(0.005, 0.05);
    out = add_gaussian_noise(out, sigma, rng);
  }
  clamp01(out);
  return out;
}

Image zoom_in(const Image& img, Rng& rng, bool enabled, const ScaleSpec& target) {
  if (!enabled) return resize_bicubic(img, target.height, target.width);
  const double fh = rng.uniform(0.6, 0.9);
  const double fw = rng.uniform(0.6, 0.9);
  size_t ch = std::max<size_t>(1, size_t(std::floor(fh * double(img.h))));
  size_t cw = std::max<size_t>(1, size_t(std::floor(fw * double(img.w))));
  ch = std::min(ch, img.h);
  cw = std::min(cw, img.w);
  const size_t top = size_t(rng.uniform_int(img.h - ch + 1));
  const size_t left = size_t(rng.uniform_int(img.w - cw + 1));
  Image cropped = crop(img, top, left, ch, cw);
  return resize_bicubic(cropped, target.height, target.width);
}

ViewBundle build_views(const TextSample& sample, const ScaleSequence& seq,
                       double mask_ratio, Rng& rng, bool augment_on, bool zoom_on) {
  ViewBundle b;
  const ScalePair pair = sample_scale_pair(seq, rng);
  b.pair_index = pair.k;
  b.s_small = pair.small;
  b.s_large = pair.large;
  b.s_mask = seq.top();

  b.view_small = augment(resize_bicubic(sample.image, pair.small.height, pair.small.width),
                         rng, augment_on);
  b.view_large = augment(resize_bicubic(sample.image, pair.large.height, pair.large.width),
                         rng, augment_on);
  b.view_masked = zoom_in(sample.image, rng, zoom_on, b.s_mask);
  b.target_view = b.view_masked;  // pixel-identical by construction
  b.mask = random_mask(b.s_mask.token_count(), mask_ratio, rng);
  return b;
}

namespace {

bool charset_ok(const std::string& label) {
  for (char c : label)
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z'))) return false;
  return true;
}

std::string lowercased(std::string s) {
  for (char& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

IngestResult ingest_folder(const std::string& dir, const std::string& manifest,
                           bool labels_required) {
  IngestResult out;
  const fs::path root(dir);
  if (!fs::exists(root)) throw InputError("ingest_folder: no such directory: " + dir);

  std::vector<std::pair<std::string, std::string>> entries;  // filename, label
  const fs::path mpath = root / manifest;
  if (fs::exists(mpath)) {
    std::ifstream in(mpath);
    if (!in) throw IoError("ingest_folder: cannot open manifest: " + mpath.string());
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const size_t tab = line.find('\t');
      std::string name = tab == std::string::npos ? line : line.substr(0, tab);
      std::string label = tab == std::string::npos ? std::string() : line.substr(tab + 1);
      entries.emplace_back(std::move(name), std::move(label));
    }
  } else {
    if (labels_required)
      throw InputError("ingest_folder: manifest required for labeled ingestion: " +
                       mpath.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(root)) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext == ".pgm" || ext == ".ppm") names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    for (auto& n : names) entries.emplace_back(std::move(n), std::string());
  }

  for (auto& [name, raw_label] : entries) {
    const std::string label = lowercased(raw_label);
    if (labels_required) {
      if (label.empty() || label.size() > kMaxLabelLength || !charset_ok(label))
        throw InputError("ingest_folder: bad label for " + name + ": '" + raw_label +
                         "'");
    }
    TextSample s;
    try {
      s.image = read_pnm((root / name).string());
    } catch (const std::exception&) {
      ++out.skipped;
      continue;
    }
    s.label = label;
    s.source_h = s.image.h;
    s.source_w = s.image.w;
    s.text_box = Box{0, 0, s.image.h, s.image.w};  // unknown for ingested data
    out.samples.push_back(std::move(s));
  }
  return out;
}

void write_corpus(const std::string& dir, const std::string& manifest,
                  const std::vector<TextSample>& samples) {
  const fs::path root(dir);
  fs::create_directories(root);
  std::ofstream mf(root / manifest, std::ios::binary);
  if (!mf) throw IoError("write_corpus: cannot open manifest for writing");
  for (size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.pgm", i);
    write_pnm((root / name).string(), samples[i].image);
    mf << name << '\t' << samples[i].label << '\n';
  }
}

}  // namespace mnsp
