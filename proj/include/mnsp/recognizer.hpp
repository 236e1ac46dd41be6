// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <cmath>
#include <string>
#include <vector>

#include "mnsp/common.hpp"
#include "mnsp/graph.hpp"
#include "mnsp/image.hpp"
#include "mnsp/model.hpp"
#include "mnsp/params.hpp"
#include "mnsp/synth.hpp"

// Recognition head: an autoregressive transformer decoder fine-tuned on top
// of the pretrained encoder. Teacher-forced cross-entropy training, greedy
// decoding, and the word-accuracy metric. Decoder parameters live under the
// "decoder." prefix so recognizer checkpoints extend encoder checkpoints.

namespace mnsp::recognizer {

// ---------------------------------------------------------------------------
// Charset: 36 lowercase alphanumerics plus three control indices. The
// char<->index mapping is bijective over the canonical (lowercase) symbols;
// uppercase input is folded before lookup.
// ---------------------------------------------------------------------------

struct Charset {
  static constexpr size_t kSymbols = 36;
  static constexpr size_t kBos = 36;
  static constexpr size_t kEos = 37;
  static constexpr size_t kPad = 38;
  static constexpr size_t kClasses = 39;

  static char fold(char ch) {
    return char(std::tolower(static_cast<unsigned char>(ch)));
  }

  static bool contains(char ch) {
    const char c = fold(ch);
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z');
  }

  // Out-of-charset symbols must be rejected at ingestion; reaching this
  // function with one is a broken precondition.
  static size_t index_of(char ch) {
    const char c = fold(ch);
    if (c >= '0' && c <= '9') return size_t(c - '0');
    if (c >= 'a' && c <= 'z') return 10 + size_t(c - 'a');
    throw ContractError(std::string("charset: symbol not in [0-9a-z]: '") + ch + "'");
  }

  static char char_at(size_t index) {
    if (index < 10) return char('0' + index);
    if (index < kSymbols) return char('a' + (index - 10));
    throw ContractError("charset: control index has no symbol");
  }

  static std::vector<size_t> encode(const std::string& text) {
    std::vector<size_t> out;
    out.reserve(text.size());
    for (char ch : text) out.push_back(index_of(ch));
    return out;
  }

  static std::string decode(const std::vector<size_t>& indices) {
    std::string out;
    out.reserve(indices.size());
    for (size_t i : indices) out.push_back(char_at(i));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RecognizerConfig {
  model::EncoderConfig enc;  // encoder profile being fine-tuned
  size_t img_h = 32;         // recognition input size (the top pyramid scale)
  size_t img_w = 128;
  size_t depth = 6;          // decoder blocks
  size_t hidden = 512;       // decoder width
  size_t heads = 8;
  size_t max_len = 25;       // longest decodable label
  double lr = 1e-4;

  GridShape grid() const { return GridShape{img_h / enc.patch, img_w / enc.patch}; }

  void validate() const {
    enc.validate();
    if (depth == 0) throw ConfigError("recognizer: depth must be positive");
    if (heads == 0) throw ConfigError("recognizer: heads must be positive");
    if (hidden == 0 || hidden % heads != 0)
      throw ConfigError("recognizer: hidden width must be a positive multiple of heads");
    if (max_len == 0) throw ConfigError("recognizer: max_len must be positive");
    if (!(lr > 0.0)) throw ConfigError("recognizer: lr must be positive");
    if (img_h == 0 || img_w == 0 || img_h % enc.patch != 0 || img_w % enc.patch != 0)
      throw ConfigError("recognizer: input size must be a positive patch multiple");
    const GridShape gr = grid();
    if (gr.rows > enc.max_grid.rows || gr.cols > enc.max_grid.cols)
      throw ConfigError("recognizer: input grid exceeds the encoder's positional table");
  }
};

// Decoder parameters, added alongside the (already initialised) encoder:
// token embedding, target positional table, context projection, and `depth`
// SA-CA-FFN blocks capped by a vocabulary head.
template <class T>
void init_recognizer(ParamStore<T>& ps, Rng& rng, const RecognizerConfig& cfg,
                     const std::string& prefix = "decoder.") {
  cfg.validate();
  ps.add(prefix + "embed",
         model::randn_arr<T>(rng, Charset::kClasses, cfg.hidden, model::kInitStd));
  ps.add(prefix + "pos",
         model::randn_arr<T>(rng, cfg.max_len + 1, cfg.hidden, model::kInitStd));
  model::init_linear(ps, rng, prefix + "proj", cfg.enc.embed_dim, cfg.hidden);
  model::init_sa_ca_ffn_stack(ps, rng, prefix, cfg.hidden, cfg.depth, Charset::kClasses);
}

// ---------------------------------------------------------------------------
// Teacher forcing: fixed-length sequences of max_len + 1 rows. Inputs are
// BOS-prefixed and PAD-filled; targets are EOS-suffixed with PAD marking the
// ignored tail.
// ---------------------------------------------------------------------------

struct TeacherForcing {
  std::vector<size_t> inputs;  // [max_len + 1] decoder input token ids
  std::vector<int> targets;    // [max_len + 1] target class per position
};

inline TeacherForcing teacher_forcing(const std::string& label, size_t max_len) {
  if (label.size() > max_len) throw InputError("teacher forcing: label longer than max_len");
  const std::vector<size_t> syms = Charset::encode(label);
  TeacherForcing tf;
  tf.inputs.assign(max_len + 1, Charset::kPad);
  tf.targets.assign(max_len + 1, int(Charset::kPad));
  tf.inputs[0] = Charset::kBos;
  for (size_t i = 0; i < syms.size(); ++i) {
    tf.inputs[i + 1] = syms[i];
    tf.targets[i] = int(syms[i]);
  }
  tf.targets[syms.size()] = int(Charset::kEos);
  return tf;
}

// ---------------------------------------------------------------------------
// Decoder forward
// ---------------------------------------------------------------------------

// Additive attention bias that zeroes out future positions: row i may attend
// to columns <= i only. -1e9 underflows to an exact zero weight after the
// stable softmax.
template <class T>
Array<T> causal_bias(size_t len) {
  Array<T> b({len, len});
  for (size_t i = 0; i < len; ++i)
    for (size_t j = 0; j < len; ++j) b[i * len + j] = j <= i ? T(0) : T(-1e9);
  return b;
}

// Encoder patch tokens projected to the decoder width.
template <class T>
typename Graph<T>::Var project_context(model::Ctx<T>& c, typename Graph<T>::Var patches,
                                       const std::string& prefix = "decoder.") {
  Graph<T>& g = *c.g;
  return g.add_rowvec(g.matmul(patches, c.leaf(prefix + "proj.w")),
                      c.leaf(prefix + "proj.b"));
}

// Logits [len(tokens), kClasses] for a teacher-forced (or partially decoded)
// token sequence. `context` must already be projected to the decoder width.
template <class T>
typename Graph<T>::Var decode_logits(model::Ctx<T>& c, const std::vector<size_t>& tokens,
                                     typename Graph<T>::Var context,
                                     const RecognizerConfig& cfg,
                                     const std::string& prefix = "decoder.") {
  Graph<T>& g = *c.g;
  if (tokens.empty()) throw ContractError("decoder: empty token sequence");
  if (tokens.size() > cfg.max_len + 1)
    throw ContractError("decoder: token sequence exceeds max_len");
  for (size_t t : tokens)
    if (t >= Charset::kClasses) throw ContractError("decoder: token id out of range");
  auto x = g.add(g.gather_rows(c.leaf(prefix + "embed"), tokens),
                 g.slice_rows(c.leaf(prefix + "pos"), 0, tokens.size()));
  auto bias = g.input(causal_bias<T>(tokens.size()));
  for (size_t i = 0; i < cfg.depth; ++i)
    x = model::sa_ca_ffn_block(c, x, context, model::blk(prefix, i), cfg.heads, bias);
  return g.add_rowvec(g.matmul(x, c.leaf(prefix + "head.w")), c.leaf(prefix + "head.b"));
}

// ---------------------------------------------------------------------------
// Fine-tuning step
// ---------------------------------------------------------------------------

// One full fine-tuning step over a labelled batch: images resized to the
// recognition input size, encoded, and scored with teacher forcing. Returns
// the mean cross-entropy over every non-PAD target position in the batch and
// accumulates gradients for encoder and decoder alike.
template <class T>
double finetune_step(const std::vector<TextSample>& batch, ParamStore<T>& ps,
                     const RecognizerConfig& cfg, GradStore<T>& grads) {
  cfg.validate();
  if (batch.empty()) throw ContractError("finetune: empty batch");

  Graph<T> g;
  model::Ctx<T> c{&g, &ps, true};
  std::vector<typename Graph<T>::Var> logits;
  std::vector<int> targets;
  logits.reserve(batch.size());
  targets.reserve(batch.size() * (cfg.max_len + 1));

  for (const TextSample& s : batch) {
    const TeacherForcing tf = teacher_forcing(s.label, cfg.max_len);
    const Image view = resize_bicubic(s.image, cfg.img_h, cfg.img_w);
    const Array<T> pixels = patchify(view, cfg.enc.patch).template cast<T>();
    model::EncodeOut<T> enc = model::encode(c, pixels, cfg.grid(), cfg.enc);
    auto context = project_context<T>(c, enc.patches);
    logits.push_back(decode_logits<T>(c, tf.inputs, context, cfg));
    targets.insert(targets.end(), tf.targets.begin(), tf.targets.end());
  }

  auto loss = g.cross_entropy_rows(g.concat_rows(logits), std::move(targets),
                                   int(Charset::kPad));
  const double value = double(g.val(loss)[0]);
  if (!std::isfinite(value)) {
    char msg[96];
    std::snprintf(msg, sizeof msg, "fine-tune loss is non-finite: %g", value);
    throw NumericError(msg);
  }
  g.backward(loss);
  g.export_param_grads(grads);
  return value;
}

// ---------------------------------------------------------------------------
// Greedy decoding
// ---------------------------------------------------------------------------

// Autoregressive argmax from BOS until EOS or max_len symbols. The encoder
// runs once per image; each step re-scores the growing prefix. Control
// indices other than EOS contribute no output symbol (an untrained model may
// emit them) but decoding still halts after max_len steps.
template <class T>
std::string greedy_decode(const Image& img, ParamStore<T>& ps, const RecognizerConfig& cfg) {
  cfg.validate();
  Graph<T> g;
  model::Ctx<T> c{&g, &ps, false};
  const Image view = resize_bicubic(img, cfg.img_h, cfg.img_w);
  const Array<T> pixels = patchify(view, cfg.enc.patch).template cast<T>();
  model::EncodeOut<T> enc = model::encode(c, pixels, cfg.grid(), cfg.enc);
  auto context = project_context<T>(c, enc.patches);

  std::vector<size_t> tokens{Charset::kBos};
  std::string out;
  for (size_t step = 0; step < cfg.max_len; ++step) {
    auto logits = decode_logits<T>(c, tokens, context, cfg);
    const Array<T>& lv = g.val(logits);
    const T* row = lv.data() + (lv.rows() - 1) * lv.cols();
    size_t best = 0;
    for (size_t j = 1; j < lv.cols(); ++j)
      if (row[j] > row[best]) best = j;
    if (best == Charset::kEos) break;
    if (best < Charset::kSymbols) out.push_back(Charset::char_at(best));
    tokens.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Word accuracy
// ---------------------------------------------------------------------------

inline std::string canonical_word(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s)
    if (std::isalnum(static_cast<unsigned char>(ch))) out.push_back(Charset::fold(ch));
  return out;
}

// Case-insensitive exact-match rate over alphanumerics; non-alphanumeric
// characters are stripped from both sides before comparison.
inline double word_accuracy(const std::vector<std::string>& preds,
                            const std::vector<std::string>& labels) {
  if (preds.empty() || labels.empty())
    throw ContractError("word_accuracy: empty prediction or label list");
  if (preds.size() != labels.size())
    throw ContractError("word_accuracy: prediction/label count mismatch");
  size_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (canonical_word(preds[i]) == canonical_word(labels[i])) ++hits;
  return double(hits) / double(preds.size());
}

}  // namespace mnsp::recognizer
