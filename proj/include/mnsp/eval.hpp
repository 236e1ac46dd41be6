// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "mnsp/common.hpp"
#include "mnsp/image.hpp"
#include "mnsp/model.hpp"
#include "mnsp/recognizer.hpp"
#include "mnsp/synth.hpp"

// Analysis protocols: scale-shift stress tests (shrink-pad), size-split
// grouping, query-based attention maps on the encoder, and the
// attention-diffusion metrics that quantify how localized those maps are.

namespace mnsp::eval {

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ProtocolReport {
  std::string protocol;
  std::map<std::string, double> accuracy;      // group -> fraction in [0,1]
  std::map<std::string, double> deltas;        // group accuracy - reference
  std::map<std::string, size_t> sample_count;  // group -> evaluated samples

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["protocol"] = protocol;
    j["accuracy"] = accuracy;
    j["deltas"] = deltas;
    j["sample_count"] = sample_count;
    return j;
  }

  std::string summary() const {
    std::string s = "protocol: " + protocol + "\n";
    char line[128];
    for (const auto& [group, acc] : accuracy) {
      size_t n = 0;
      auto it = sample_count.find(group);
      if (it != sample_count.end()) n = it->second;
      std::snprintf(line, sizeof line, "  %-12s accuracy %.4f over %zu samples\n",
                    group.c_str(), acc, n);
      s += line;
    }
    for (const auto& [name, d] : deltas) {
      std::snprintf(line, sizeof line, "  %-12s delta %+.4f\n", name.c_str(), d);
      s += line;
    }
    return s;
  }
};

// report.json plus a human-readable summary.txt under `dir`. When `config`
// is given it is embedded in the JSON so reports are self-describing.
inline void write_report(const ProtocolReport& report, const std::filesystem::path& dir,
                         const nlohmann::json* config = nullptr) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  nlohmann::json j = report.to_json();
  j["format"] = "mnsp-report-v1";
  if (config != nullptr) j["config"] = *config;
  {
    std::ofstream f(dir / "report.json", std::ios::trunc);
    if (!f) throw IoError("cannot write report.json under " + dir.string());
    f << j.dump(2) << "\n";
    if (!f.flush()) throw IoError("short write: report.json");
  }
  {
    std::ofstream f(dir / "summary.txt", std::ios::trunc);
    if (!f) throw IoError("cannot write summary.txt under " + dir.string());
    f << report.summary();
    if (!f.flush()) throw IoError("short write: summary.txt");
  }
}

// ---------------------------------------------------------------------------
// Standard protocol: plain word accuracy over the corpus, no grouping.
// ---------------------------------------------------------------------------

template <class T>
ProtocolReport standard_protocol(const std::vector<TextSample>& corpus,
                                 ParamStore<T>& ps,
                                 const recognizer::RecognizerConfig& cfg) {
  if (corpus.empty()) throw InputError("standard protocol: empty corpus");
  std::vector<std::string> labels, preds;
  labels.reserve(corpus.size());
  for (const TextSample& s : corpus) {
    labels.push_back(s.label);
    preds.push_back(recognizer::greedy_decode(s.image, ps, cfg));
  }
  ProtocolReport r;
  r.protocol = "standard";
  r.accuracy["standard"] = recognizer::word_accuracy(preds, labels);
  r.sample_count["standard"] = corpus.size();
  return r;
}

// ---------------------------------------------------------------------------
// Shrink-pad protocol
// ---------------------------------------------------------------------------

// The stress transform: resize to `factor` per side and center the result on
// a black canvas of the original size. factor 1.0 is the identity.
inline Image shrink_pad(const Image& img, double factor) {
  if (!(factor > 0.0) || factor > 1.0)
    throw ConfigError("shrink_pad: factor must lie in (0, 1]");
  const size_t sh = std::max<size_t>(1, size_t(std::lround(double(img.h) * factor)));
  const size_t sw = std::max<size_t>(1, size_t(std::lround(double(img.w) * factor)));
  if (sh == img.h && sw == img.w) return img;
  const Image small = resize_bicubic(img, sh, sw);
  Image canvas(img.h, img.w, img.c, 0.0);
  const size_t top = (img.h - sh) / 2, left = (img.w - sw) / 2;
  for (size_t y = 0; y < sh; ++y)
    for (size_t x = 0; x < sw; ++x)
      for (size_t ch = 0; ch < img.c; ++ch)
        canvas.at(top + y, left + x, ch) = small.at(y, x, ch);
  return canvas;
}

template <class T>
ProtocolReport shrink_pad_protocol(const std::vector<TextSample>& corpus,
                                   ParamStore<T>& ps,
                                   const recognizer::RecognizerConfig& cfg,
                                   double factor = 0.5) {
  if (!(factor > 0.0) || factor > 1.0)
    throw ConfigError("shrink_pad: factor must lie in (0, 1]");
  if (corpus.empty()) throw InputError("shrink_pad: empty corpus");

  std::vector<std::string> labels, standard, shrunk;
  labels.reserve(corpus.size());
  for (const TextSample& s : corpus) {
    labels.push_back(s.label);
    standard.push_back(recognizer::greedy_decode(s.image, ps, cfg));
    shrunk.push_back(recognizer::greedy_decode(shrink_pad(s.image, factor), ps, cfg));
  }

  ProtocolReport r;
  r.protocol = "shrink_pad";
  r.accuracy["standard"] = recognizer::word_accuracy(standard, labels);
  r.accuracy["shrunk"] = recognizer::word_accuracy(shrunk, labels);
  r.deltas["shrunk"] = r.accuracy["shrunk"] - r.accuracy["standard"];
  r.sample_count["standard"] = corpus.size();
  r.sample_count["shrunk"] = corpus.size();
  return r;
}

// ---------------------------------------------------------------------------
// Size-split protocol
// ---------------------------------------------------------------------------

// Median split by source area (h*w before any pipeline resize); ties keep
// ingestion order, the small half takes floor(n/2) samples. All images are
// evaluated at the recognition input size.
template <class T>
ProtocolReport size_split_protocol(const std::vector<TextSample>& corpus,
                                   ParamStore<T>& ps,
                                   const recognizer::RecognizerConfig& cfg) {
  if (corpus.size() < 2) throw InputError("size_split: need at least 2 samples");
  for (const TextSample& s : corpus)
    if (s.source_h == 0 || s.source_w == 0)
      throw InputError("size_split: sample lacks its source size");

  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return corpus[a].source_h * corpus[a].source_w <
           corpus[b].source_h * corpus[b].source_w;
  });

  const size_t n_small = corpus.size() / 2;
  auto evaluate = [&](size_t begin, size_t end) {
    std::vector<std::string> preds, labels;
    for (size_t i = begin; i < end; ++i) {
      const TextSample& s = corpus[order[i]];
      preds.push_back(recognizer::greedy_decode(s.image, ps, cfg));
      labels.push_back(s.label);
    }
    return recognizer::word_accuracy(preds, labels);
  };

  ProtocolReport r;
  r.protocol = "size_split";
  r.accuracy["small"] = evaluate(0, n_small);
  r.accuracy["large"] = evaluate(n_small, corpus.size());
  r.deltas["large_minus_small"] = r.accuracy["large"] - r.accuracy["small"];
  r.sample_count["small"] = n_small;
  r.sample_count["large"] = corpus.size() - n_small;
  return r;
}

// ---------------------------------------------------------------------------
// Attention maps
// ---------------------------------------------------------------------------

struct AttentionMap {
  size_t qrow = 0, qcol = 0;     // query patch coordinate
  size_t layer = 0;              // encoder layer the row was taken from
  GridShape grid;                // encoder grid of the input
  std::vector<double> weights;   // [grid.count()], non-negative, sums to 1
};

inline constexpr size_t kLastLayer = size_t(-1);

// Head-averaged attention row of the query patch at `layer` (default: the
// last encoder layer), CLS column dropped and the rest renormalized.
template <class T>
AttentionMap attention_map(ParamStore<T>& ps, const Image& img,
                           size_t query_row, size_t query_col,
                           const recognizer::RecognizerConfig& cfg,
                           size_t layer = kLastLayer) {
  cfg.validate();
  const GridShape grid = cfg.grid();
  if (layer == kLastLayer) layer = cfg.enc.depth - 1;
  if (layer >= cfg.enc.depth) throw InputError("attention_map: layer out of range");
  if (query_row >= grid.rows || query_col >= grid.cols)
    throw InputError("attention_map: query outside the patch grid");

  Graph<T> g;
  model::Ctx<T> c{&g, &ps, false};
  const Image view = resize_bicubic(img, cfg.img_h, cfg.img_w);
  const Array<T> pixels = patchify(view, cfg.enc.patch).template cast<T>();
  model::AttnCapture<T> capture;
  (void)model::encode(c, pixels, grid, cfg.enc, nullptr, "encoder.", &capture);

  const std::vector<Array<T>>& heads = capture.layers.at(layer);
  const size_t qi = 1 + query_row * grid.cols + query_col;  // skip the CLS row
  const size_t n = grid.count();

  AttentionMap m;
  m.qrow = query_row;
  m.qcol = query_col;
  m.layer = layer;
  m.grid = grid;
  m.weights.assign(n, 0.0);
  for (const Array<T>& att : heads) {
    if (att.rows() != n + 1 || att.cols() != n + 1)
      throw ContractError("attention_map: captured matrix does not match the grid");
    for (size_t j = 0; j < n; ++j) m.weights[j] += double(att[qi * (n + 1) + (j + 1)]);
  }
  for (double& w : m.weights) w /= double(heads.size());
  const double total = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
  if (!(total > 0.0)) throw NumericError("attention_map: degenerate attention row");
  for (double& w : m.weights) w /= total;
  return m;
}

// ---------------------------------------------------------------------------
// Diffusion metrics
// ---------------------------------------------------------------------------

struct DiffusionMetrics {
  double entropy = 0.0;      // nats; ln N for uniform, 0 for one-hot
  double in_box_mass = 0.0;  // attention mass inside the text box
};

// `text_box` is in patch-grid coordinates (top/left inclusive, bottom/right
// exclusive), clamped to the grid.
inline DiffusionMetrics diffusion_metrics(const AttentionMap& map, const Box& text_box) {
  DiffusionMetrics d;
  const size_t bottom = std::min(text_box.bottom, map.grid.rows);
  const size_t right = std::min(text_box.right, map.grid.cols);
  for (size_t r = 0; r < map.grid.rows; ++r) {
    for (size_t c = 0; c < map.grid.cols; ++c) {
      const double w = map.weights[r * map.grid.cols + c];
      if (w > 0.0) d.entropy -= w * std::log(w);
      if (r >= text_box.top && r < bottom && c >= text_box.left && c < right)
        d.in_box_mass += w;
    }
  }
  return d;
}

// Pixel-space box -> patch-grid box after a resize to dst_h x dst_w: outer
// cover (floor/ceil) of the scaled rectangle, clamped to the grid.
inline Box to_patch_box(const Box& pixel_box, size_t src_h, size_t src_w,
                        size_t dst_h, size_t dst_w, size_t patch) {
  if (src_h == 0 || src_w == 0 || patch == 0)
    throw ContractError("to_patch_box: zero-sized source or patch");
  if (pixel_box.empty()) return Box{};
  const double sy = double(dst_h) / double(src_h);
  const double sx = double(dst_w) / double(src_w);
  Box b;
  b.top = size_t(std::floor(double(pixel_box.top) * sy / double(patch)));
  b.left = size_t(std::floor(double(pixel_box.left) * sx / double(patch)));
  b.bottom = size_t(std::ceil(double(pixel_box.bottom) * sy / double(patch)));
  b.right = size_t(std::ceil(double(pixel_box.right) * sx / double(patch)));
  b.bottom = std::min(b.bottom, dst_h / patch);
  b.right = std::min(b.right, dst_w / patch);
  b.top = std::min(b.top, b.bottom);
  b.left = std::min(b.left, b.right);
  return b;
}

// ---------------------------------------------------------------------------
// Heatmap emission
// ---------------------------------------------------------------------------

// Writes `<base>.csv` (raw weights, row-major) and `<base>.pgm` (8-bit,
// min-max normalized, nearest-neighbor upscaled to out_h x out_w, query cell
// at intensity 255). A flat map renders mid-gray.
inline void emit_heatmap(const AttentionMap& map, const std::filesystem::path& base,
                         size_t out_h, size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ContractError("emit_heatmap: empty output size");
  const size_t gr = map.grid.rows, gc = map.grid.cols;
  if (map.weights.size() != gr * gc)
    throw ContractError("emit_heatmap: weight count does not match the grid");

  {
    std::ofstream f(base.string() + ".csv", std::ios::trunc);
    if (!f) throw IoError("cannot write heatmap CSV: " + base.string() + ".csv");
    char cell[32];
    for (size_t r = 0; r < gr; ++r) {
      for (size_t c = 0; c < gc; ++c) {
        std::snprintf(cell, sizeof cell, "%.9g", map.weights[r * gc + c]);
        f << cell << (c + 1 < gc ? "," : "\n");
      }
    }
    if (!f.flush()) throw IoError("short write: heatmap CSV");
  }

  double lo = map.weights[0], hi = map.weights[0];
  for (double w : map.weights) {
    lo = std::min(lo, w);
    hi = std::max(hi, w);
  }
  Image img(out_h, out_w, 1, 0.0);
  for (size_t y = 0; y < out_h; ++y) {
    const size_t r = std::min(gr - 1, y * gr / out_h);
    for (size_t x = 0; x < out_w; ++x) {
      const size_t c = std::min(gc - 1, x * gc / out_w);
      long level = 128;  // flat maps render mid-gray
      if (hi > lo)
        level = std::lround((map.weights[r * gc + c] - lo) / (hi - lo) * 255.0);
      if (r == map.qrow && c == map.qcol) level = 255;
      img.at(y, x, 0) = double(level) / 255.0;
    }
  }
  write_pnm(base.string() + ".pgm", img);
}

}  // namespace mnsp::eval
