// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mnsp/graph.hpp"
#include "mnsp/model.hpp"
#include "mnsp/scales.hpp"

namespace mnsp::objectives {

// ---------------------------------------------------------------------------
// Loss values. `total` is always accumulated as (nsp + mim) + mla so repeated
// evaluations agree bit for bit.
// ---------------------------------------------------------------------------

template <class T>
struct LossBreakdown {
  T nsp = T(0);
  T mim = T(0);
  T mla = T(0);
  T total = T(0);
};

template <class T>
T total_loss(const LossBreakdown<T>& parts) {
  return (parts.nsp + parts.mim) + parts.mla;
}

// ---------------------------------------------------------------------------
// Differentiable loss builders
// ---------------------------------------------------------------------------

// Feature MSE normalized by token count only (channel width is not divided
// out; any global rescaling is absorbed by the learning rate).
template <class T>
typename Graph<T>::Var nsp_loss(Graph<T>& g, typename Graph<T>::Var pred,
                                typename Graph<T>::Var target) {
  const size_t n = g.val(pred).rows();
  if (n == 0) throw ContractError("nsp_loss: empty prediction");
  return g.scale(g.sum_sq_diff(pred, target), T(1) / T(n));
}

// Masked reconstruction: mean over masked positions of the squared row
// distance. Unmasked rows are never touched, so the value is bit-identical
// under arbitrary changes to predictions there.
template <class T>
typename Graph<T>::Var mim_loss(Graph<T>& g, typename Graph<T>::Var pred,
                                typename Graph<T>::Var target, const MaskPattern& mask) {
  if (g.val(pred).rows() != mask.flags.size() ||
      g.val(target).rows() != mask.flags.size())
    throw ContractError("mim_loss: row count does not match mask");
  std::vector<size_t> idx = mask.masked_indices();
  if (idx.empty()) throw ContractError("mim_loss: mask selects no positions");
  auto p = g.gather_rows(pred, idx);
  auto t = g.gather_rows(target, idx);
  return g.scale(g.sum_sq_diff(p, t), T(1) / T(idx.size()));
}

// Alignment of the masked-view CLS against both clean-view CLS vectors: sum
// of the two squared distances, no averaging.
template <class T>
typename Graph<T>::Var mla_loss(Graph<T>& g, typename Graph<T>::Var cls_masked,
                                typename Graph<T>::Var cls_small,
                                typename Graph<T>::Var cls_large) {
  auto a = g.sum_sq_diff(cls_masked, cls_small);
  auto b = g.sum_sq_diff(cls_masked, cls_large);
  return g.add(a, b);
}

// Unweighted sum, fixed accumulation order (nsp + mim) + mla.
template <class T>
typename Graph<T>::Var total_loss(Graph<T>& g, typename Graph<T>::Var nsp,
                                  typename Graph<T>::Var mim,
                                  typename Graph<T>::Var mla) {
  return g.add(g.add(nsp, mim), mla);
}

// ---------------------------------------------------------------------------
// Prediction targets
// ---------------------------------------------------------------------------

enum class TargetMode { feature, pixel };

inline TargetMode parse_target_mode(const std::string& s) {
  if (s == "feature") return TargetMode::feature;
  if (s == "pixel") return TargetMode::pixel;
  throw ConfigError("unknown target mode: " + s);
}

inline std::string to_string(TargetMode m) {
  return m == TargetMode::feature ? "feature" : "pixel";
}

// Per-row standardization to zero mean / unit variance (population variance,
// epsilon inside the square root). Constant rows map to zeros.
template <class T>
Array<T> standardize_patch_rows(const Array<T>& x, T eps = T(1e-6)) {
  Array<T> out = x;
  const size_t rows = x.rows(), cols = x.cols();
  if (cols == 0) throw ContractError("standardize: empty rows");
  for (size_t r = 0; r < rows; ++r) {
    T* p = out.data() + r * cols;
    T mu = T(0);
    for (size_t j = 0; j < cols; ++j) mu += p[j];
    mu /= T(cols);
    T var = T(0);
    for (size_t j = 0; j < cols; ++j) var += (p[j] - mu) * (p[j] - mu);
    var /= T(cols);
    const T inv = T(1) / std::sqrt(var + eps);
    for (size_t j = 0; j < cols; ++j) p[j] = (p[j] - mu) * inv;
  }
  return out;
}

// Regression target for a clean view. Feature mode runs the frozen teacher
// encoder (leaves enter the graph as constants, so no gradient can reach it)
// and strips CLS; pixel mode standardizes the raw patch rows, giving targets
// of width p*p*C.
template <class T>
typename Graph<T>::Var make_target(Graph<T>& g, ParamStore<T>& teacher_ps,
                                   const model::EncoderConfig& cfg,
                                   const Array<T>& patch_pixels, GridShape grid,
                                   TargetMode mode,
                                   const std::string& teacher_prefix = "encoder.") {
  if (mode == TargetMode::pixel)
    return g.input(standardize_patch_rows(patch_pixels));
  model::Ctx<T> tc{&g, &teacher_ps, false};
  return model::encode(tc, patch_pixels, grid, cfg, nullptr, teacher_prefix).patches;
}

// Decoder head width required by a target mode.
inline size_t target_width(TargetMode mode, const model::EncoderConfig& cfg) {
  return mode == TargetMode::feature ? cfg.embed_dim : cfg.patch_len();
}

}  // namespace mnsp::objectives
