// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mnsp/graph.hpp"
#include "mnsp/params.hpp"
#include "mnsp/scales.hpp"

namespace mnsp::model {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct EncoderConfig {
  size_t embed_dim = 384;
  size_t depth = 12;
  size_t heads = 6;
  size_t patch = 4;
  size_t channels = 1;
  GridShape max_grid{8, 32};

  static EncoderConfig desk() { return EncoderConfig{}; }
  static EncoderConfig tiny() {
    EncoderConfig c;
    c.embed_dim = 8;
    c.depth = 2;
    c.heads = 2;
    c.max_grid = GridShape{2, 8};
    return c;
  }

  void validate() const {
    if (embed_dim == 0 || depth == 0 || heads == 0 || patch == 0 || channels == 0)
      throw ConfigError("encoder config: zero field");
    if (embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
    if (max_grid.count() == 0) throw ConfigError("encoder config: empty max_grid");
  }
  size_t head_dim() const { return embed_dim / heads; }
  size_t patch_len() const { return patch * patch * channels; }
};

// ---------------------------------------------------------------------------
// Parameter initialization. Weight matrices draw normal(0, 0.02); biases and
// normalization offsets start at zero, normalization gains at one.
// ---------------------------------------------------------------------------

template <class T>
Array<T> randn_arr(Rng& rng, size_t r, size_t c, double std) {
  Array<T> a({r, c});
  for (auto& x : a.v) x = T(std * rng.normal());
  return a;
}

template <class T>
void init_linear(ParamStore<T>& ps, Rng& rng, const std::string& name, size_t in, size_t out) {
  ps.add(name + ".w", randn_arr<T>(rng, in, out, kInitStd));
  ps.add(name + ".b", Array<T>({1, out}));
}

template <class T>
void init_layernorm(ParamStore<T>& ps, const std::string& name, size_t d) {
  ps.add(name + ".g", Array<T>::full(1, d, T(1)));
  ps.add(name + ".b", Array<T>({1, d}));
}

template <class T>
void init_attention(ParamStore<T>& ps, Rng& rng, const std::string& prefix, size_t d) {
  for (const char* nm : {"wq", "wk", "wv", "wo"})
    ps.add(prefix + nm, randn_arr<T>(rng, d, d, kInitStd));
  for (const char* nm : {"bq", "bk", "bv", "bo"}) ps.add(prefix + nm, Array<T>({1, d}));
}

template <class T>
void init_ffn(ParamStore<T>& ps, Rng& rng, const std::string& prefix, size_t d) {
  ps.add(prefix + "w1", randn_arr<T>(rng, d, 4 * d, kInitStd));
  ps.add(prefix + "b1", Array<T>({1, 4 * d}));
  ps.add(prefix + "w2", randn_arr<T>(rng, 4 * d, d, kInitStd));
  ps.add(prefix + "b2", Array<T>({1, d}));
}

inline std::string blk(const std::string& prefix, size_t i) {
  return prefix + "blocks." + std::to_string(i) + ".";
}

template <class T>
void init_encoder(ParamStore<T>& ps, const EncoderConfig& cfg, Rng& rng,
                  const std::string& prefix = "encoder.") {
  cfg.validate();
  const size_t d = cfg.embed_dim;
  init_linear(ps, rng, prefix + "patch", cfg.patch_len(), d);
  ps.add(prefix + "cls", randn_arr<T>(rng, 1, d, kInitStd));
  ps.add(prefix + "pos", randn_arr<T>(rng, cfg.max_grid.count(), d, kInitStd));
  for (size_t i = 0; i < cfg.depth; ++i) {
    const std::string b = blk(prefix, i);
    init_layernorm(ps, b + "ln1", d);
    init_attention(ps, rng, b + "attn.", d);
    init_layernorm(ps, b + "ln2", d);
    init_ffn(ps, rng, b + "mlp.", d);
  }
  init_layernorm(ps, prefix + "ln_f", d);
}

// Two-block SA-CA-FFN decoder stack plus a linear head (the NSP and MIM
// decoders share this layout; MIM adds its mask token).
template <class T>
void init_sa_ca_ffn_stack(ParamStore<T>& ps, Rng& rng, const std::string& prefix, size_t d,
                          size_t blocks, size_t head_out) {
  for (size_t i = 0; i < blocks; ++i) {
    const std::string b = blk(prefix, i);
    init_layernorm(ps, b + "ln1", d);
    init_attention(ps, rng, b + "sa.", d);
    init_layernorm(ps, b + "ln2", d);
    init_attention(ps, rng, b + "ca.", d);
    init_layernorm(ps, b + "ln3", d);
    init_ffn(ps, rng, b + "mlp.", d);
  }
  init_linear(ps, rng, prefix + "head", d, head_out);
}

template <class T>
void init_nsp(ParamStore<T>& ps, Rng& rng, size_t d, size_t head_out,
              const std::string& prefix = "nsp.") {
  init_sa_ca_ffn_stack(ps, rng, prefix, d, 2, head_out);
}

template <class T>
void init_mim(ParamStore<T>& ps, Rng& rng, size_t d, size_t head_out,
              const std::string& prefix = "mim.") {
  ps.add(prefix + "mask_token", randn_arr<T>(rng, 1, d, kInitStd));
  init_sa_ca_ffn_stack(ps, rng, prefix, d, 2, head_out);
}

// ---------------------------------------------------------------------------
// Forward builders. `Ctx` binds a graph to a parameter store; `trainable`
// decides whether leaves export gradients (online model) or are frozen
// references (teacher).
// ---------------------------------------------------------------------------

template <class T>
struct Ctx {
  Graph<T>* g;
  ParamStore<T>* ps;
  bool trainable = true;

  using Var = typename Graph<T>::Var;
  Var leaf(const std::string& name) {
    return trainable ? g->param(name, &ps->at(name)) : g->input_ref(&ps->at(name));
  }
};

// Captured post-softmax attention weights: layers[layer][head] = [M, N].
template <class T>
struct AttnCapture {
  std::vector<std::vector<Array<T>>> layers;
};

// Multi-head attention. Queries from x_q, keys/values from x_kv. `bias`
// (optional) is added to every head's score matrix before softmax (causal
// masks). `capture` (optional) receives each head's weight matrix.
template <class T>
typename Graph<T>::Var mha(Ctx<T>& c, typename Graph<T>::Var x_q,
                           typename Graph<T>::Var x_kv, const std::string& prefix,
                           size_t heads, typename Graph<T>::Var bias = {},
                           std::vector<Array<T>>* capture = nullptr) {
  Graph<T>& g = *c.g;
  const size_t d = g.val(x_q).cols();
  if (g.val(x_kv).cols() != d) throw ConfigError("attention: query/context width mismatch");
  if (d % heads != 0) throw ConfigError("attention: width not divisible by heads");
  if (g.val(x_kv).rows() == 0) throw ConfigError("attention: empty context");
  const size_t dh = d / heads;
  auto q = g.add_rowvec(g.matmul(x_q, c.leaf(prefix + "wq")), c.leaf(prefix + "bq"));
  auto k = g.add_rowvec(g.matmul(x_kv, c.leaf(prefix + "wk")), c.leaf(prefix + "bk"));
  auto v = g.add_rowvec(g.matmul(x_kv, c.leaf(prefix + "wv")), c.leaf(prefix + "bv"));
  std::vector<typename Graph<T>::Var> outs;
  outs.reserve(heads);
  const T inv_sqrt = T(1.0 / std::sqrt(double(dh)));
  for (size_t h = 0; h < heads; ++h) {
    auto qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    auto scores = g.scale(g.matmul(qh, kh, false, true), inv_sqrt);
    if (bias.ok()) scores = g.add(scores, bias);
    auto att = g.softmax_rows(scores);
    if (capture != nullptr) capture->push_back(g.val(att));
    outs.push_back(g.matmul(att, vh));
  }
  auto merged = g.concat_cols(outs);
  return g.add_rowvec(g.matmul(merged, c.leaf(prefix + "wo")), c.leaf(prefix + "bo"));
}

template <class T>
typename Graph<T>::Var layernorm(Ctx<T>& c, typename Graph<T>::Var x,
                                 const std::string& name) {
  return c.g->layernorm(x, c.leaf(name + ".g"), c.leaf(name + ".b"), T(kLayerNormEps));
}

template <class T>
typename Graph<T>::Var ffn(Ctx<T>& c, typename Graph<T>::Var x, const std::string& prefix) {
  Graph<T>& g = *c.g;
  auto h = g.gelu(g.add_rowvec(g.matmul(x, c.leaf(prefix + "w1")), c.leaf(prefix + "b1")));
  return g.add_rowvec(g.matmul(h, c.leaf(prefix + "w2")), c.leaf(prefix + "b2"));
}

// Pre-norm encoder block: x += SA(LN(x)); x += FFN(LN(x)).
template <class T>
typename Graph<T>::Var encoder_block(Ctx<T>& c, typename Graph<T>::Var x,
                                     const std::string& prefix, size_t heads,
                                     std::vector<Array<T>>* capture = nullptr) {
  Graph<T>& g = *c.g;
  auto h = layernorm(c, x, prefix + "ln1");
  x = g.add(x, mha(c, h, h, prefix + "attn.", heads, {}, capture));
  x = g.add(x, ffn(c, layernorm(c, x, prefix + "ln2"), prefix + "mlp."));
  return x;
}

// Pre-norm SA-CA-FFN decoder block. Cross-attention reads `context` as
// keys/values; `sa_bias` masks decoder self-attention when causal.
template <class T>
typename Graph<T>::Var sa_ca_ffn_block(Ctx<T>& c, typename Graph<T>::Var x,
                                       typename Graph<T>::Var context,
                                       const std::string& prefix, size_t heads,
                                       typename Graph<T>::Var sa_bias = {}) {
  Graph<T>& g = *c.g;
  if (g.val(context).cols() != g.val(x).cols())
    throw ConfigError("sa_ca_ffn: context width mismatch");
  auto h = layernorm(c, x, prefix + "ln1");
  x = g.add(x, mha(c, h, h, prefix + "sa.", heads, sa_bias));
  x = g.add(x, mha(c, layernorm(c, x, prefix + "ln2"), context, prefix + "ca.", heads));
  x = g.add(x, ffn(c, layernorm(c, x, prefix + "ln3"), prefix + "mlp."));
  return x;
}

// ---------------------------------------------------------------------------
// Encoder forward
// ---------------------------------------------------------------------------

template <class T>
struct EncodeOut {
  typename Graph<T>::Var all;      // [1 + V, d]: CLS row then patch rows
  typename Graph<T>::Var cls;      // [1, d]
  typename Graph<T>::Var patches;  // [V, d]
  GridShape grid;                  // full grid of the view
  std::vector<size_t> positions;   // grid position of each patch row
};

// Positional embeddings for `grid`: the max_grid table, bicubically resampled
// when the grid is smaller.
template <class T>
typename Graph<T>::Var pos_for_grid(Ctx<T>& c, const EncoderConfig& cfg, GridShape grid,
                                    const std::string& prefix) {
  auto pos = c.leaf(prefix + "pos");
  if (grid == cfg.max_grid) return pos;
  if (grid.rows > cfg.max_grid.rows || grid.cols > cfg.max_grid.cols)
    throw ConfigError("grid exceeds positional-embedding table");
  return c.g->grid_resample(pos, cfg.max_grid, grid);
}

// Embedding stage: flatten-projected patches plus positional embeddings,
// CLS prepended. `patch_pixels` holds every patch of the view ([N, p*p*c],
// row-major grid order). When `visible` is given, only those rows survive
// (the CLS token always stays) and `positions` records their grid slots.
template <class T>
struct EmbedOut {
  typename Graph<T>::Var x;       // [1 + V, d]
  GridShape grid;
  std::vector<size_t> positions;  // grid position of each patch row
};

template <class T>
EmbedOut<T> patch_embed(Ctx<T>& c, const Array<T>& patch_pixels, GridShape grid,
                        const EncoderConfig& cfg,
                        const std::vector<size_t>* visible = nullptr,
                        const std::string& prefix = "encoder.") {
  cfg.validate();
  Graph<T>& g = *c.g;
  if (patch_pixels.rows() != grid.count())
    throw InputError("patch_embed: patch rows do not match grid");
  if (patch_pixels.cols() != cfg.patch_len())
    throw InputError("patch_embed: patch length does not match config");

  EmbedOut<T> out;
  out.grid = grid;
  if (visible != nullptr) {
    out.positions = *visible;
  } else {
    out.positions.resize(grid.count());
    for (size_t i = 0; i < out.positions.size(); ++i) out.positions[i] = i;
  }
  const size_t v_count = out.positions.size();

  // host-side row gather of constant pixels, then one linear projection
  Array<T> pix({v_count, patch_pixels.cols()});
  for (size_t i = 0; i < v_count; ++i) {
    if (out.positions[i] >= patch_pixels.rows())
      throw ContractError("patch_embed: visible index out of range");
    std::copy(patch_pixels.data() + out.positions[i] * patch_pixels.cols(),
              patch_pixels.data() + (out.positions[i] + 1) * patch_pixels.cols(),
              pix.data() + i * patch_pixels.cols());
  }
  auto pe = g.add_rowvec(g.matmul(g.input(std::move(pix)), c.leaf(prefix + "patch.w")),
                         c.leaf(prefix + "patch.b"));
  auto pos = pos_for_grid(c, cfg, grid, prefix);
  if (visible != nullptr) pos = g.gather_rows(pos, out.positions);
  out.x = g.concat_rows({c.leaf(prefix + "cls"), g.add(pe, pos)});
  return out;
}

template <class T>
EncodeOut<T> encode(Ctx<T>& c, const Array<T>& patch_pixels, GridShape grid,
                    const EncoderConfig& cfg, const std::vector<size_t>* visible = nullptr,
                    const std::string& prefix = "encoder.",
                    AttnCapture<T>* capture = nullptr) {
  Graph<T>& g = *c.g;
  EmbedOut<T> emb = patch_embed(c, patch_pixels, grid, cfg, visible, prefix);
  EncodeOut<T> out;
  out.grid = emb.grid;
  out.positions = std::move(emb.positions);
  const size_t v_count = out.positions.size();
  auto x = emb.x;

  for (size_t i = 0; i < cfg.depth; ++i) {
    std::vector<Array<T>>* cap = nullptr;
    if (capture != nullptr) {
      capture->layers.emplace_back();
      cap = &capture->layers.back();
    }
    x = encoder_block(c, x, blk(prefix, i), cfg.heads, cap);
  }
  out.all = layernorm(c, x, prefix + "ln_f");
  out.cls = g.slice_rows(out.all, 0, 1);
  out.patches = g.slice_rows(out.all, 1, 1 + v_count);
  return out;
}

// ---------------------------------------------------------------------------
// Decoders
// ---------------------------------------------------------------------------

// Token-grid bicubic upsampling (CLS must already be stripped; a row count
// that does not match `gin` — e.g. a stray CLS row — is a contract error).
template <class T>
typename Graph<T>::Var upsample_tokens_bicubic(Graph<T>& g, typename Graph<T>::Var x,
                                               GridShape gin, GridShape gout) {
  return g.grid_resample(x, gin, gout);
}

// NSP decoder: two SA-CA-FFN blocks over the upsampled tokens F, cross-
// attending to the small-scale patch tokens, then a linear head. When
// `expected_tokens` is nonzero, F must carry exactly that many rows. The
// pre-head sequence (always embed-dim wide, unlike the head output) is
// exposed through `features` for downstream guidance.
template <class T>
typename Graph<T>::Var nsp_decode(Ctx<T>& c, typename Graph<T>::Var F,
                                  typename Graph<T>::Var context_small, size_t heads,
                                  const std::string& prefix = "nsp.",
                                  size_t expected_tokens = 0,
                                  typename Graph<T>::Var* features = nullptr) {
  if (expected_tokens != 0 && c.g->val(F).rows() != expected_tokens)
    throw ConfigError("nsp_decode: token count does not match the scale pair");
  auto x = F;
  for (size_t i = 0; i < 2; ++i)
    x = sa_ca_ffn_block(c, x, context_small, blk(prefix, i), heads);
  if (features != nullptr) *features = x;
  return c.g->add_rowvec(c.g->matmul(x, c.leaf(prefix + "head.w")),
                         c.leaf(prefix + "head.b"));
}

// Guided MIM decoder: block 0 cross-attends to the small-scale tokens, block
// 1 to the NSP prediction. Passing invalid context vars (guidance off)
// replaces each block's context with its own input sequence.
template <class T>
typename Graph<T>::Var mim_decode(Ctx<T>& c, typename Graph<T>::Var F_mim,
                                  typename Graph<T>::Var context_small,
                                  typename Graph<T>::Var context_nsp, size_t heads,
                                  const std::string& prefix = "mim.") {
  auto x = F_mim;
  const typename Graph<T>::Var ctxs[2] = {context_small, context_nsp};
  for (size_t i = 0; i < 2; ++i)
    x = sa_ca_ffn_block(c, x, ctxs[i].ok() ? ctxs[i] : x, blk(prefix, i), heads);
  return c.g->add_rowvec(c.g->matmul(x, c.leaf(prefix + "head.w")),
                         c.leaf(prefix + "head.b"));
}

// ---------------------------------------------------------------------------
// Standalone attention (value-level API used by tests and docs)
// ---------------------------------------------------------------------------

inline Array<double> scaled_dot_attention(const Array<double>& Q, const Array<double>& K,
                                          const Array<double>& V, size_t heads) {
  if (K.rows() == 0 || V.rows() == 0) throw ConfigError("attention: empty keys/values");
  if (Q.cols() != K.cols() || K.rows() != V.rows() || Q.cols() != V.cols())
    throw ConfigError("attention: dimension mismatch");
  if (heads == 0 || Q.cols() % heads != 0)
    throw ConfigError("attention: width not divisible by heads");
  Graph<double> g;
  const size_t dh = Q.cols() / heads;
  auto q = g.input(Q), k = g.input(K), v = g.input(V);
  std::vector<Graph<double>::Var> outs;
  for (size_t h = 0; h < heads; ++h) {
    auto qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    auto att = g.softmax_rows(g.scale(g.matmul(qh, kh, false, true),
                                      1.0 / std::sqrt(double(dh))));
    outs.push_back(g.matmul(att, vh));
  }
  return g.val(g.concat_cols(outs));
}

}  // namespace mnsp::model
