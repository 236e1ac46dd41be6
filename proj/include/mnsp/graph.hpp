// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mnsp/array.hpp"
#include "mnsp/bicubic.hpp"
#include "mnsp/common.hpp"
#include "mnsp/kernels.hpp"
#include "mnsp/params.hpp"

namespace mnsp {

// Reverse-mode tape over 2-D arrays. One Graph is built per sample per step
// and discarded; parameters live outside (ParamStore) and are referenced, not
// copied. Backward replays node closures in reverse creation order and
// accumulates into lazily allocated per-node gradient buffers; parameter
// gradients are then exported by name.
//
// Instantiated at float (training) and double (test/gradcheck mode).
template <class T>
class Graph {
 public:
  struct Var {
    size_t id = size_t(-1);
    bool ok() const { return id != size_t(-1); }
  };

  // --- leaves -------------------------------------------------------------

  // Constant data owned by the graph. No gradient.
  Var input(Array<T> v) { return push(std::move(v), {}, false); }

  // Constant data stored elsewhere (must outlive the graph). No gradient.
  Var input_ref(const Array<T>* v) {
    Slot s;
    s.ext = v;
    s.needs = false;
    slots_.push_back(std::move(s));
    return Var{slots_.size() - 1};
  }

  // Trainable leaf: reads `*v`, exports its gradient under `name`.
  Var param(const std::string& name, const Array<T>* v) {
    Slot s;
    s.ext = v;
    s.needs = true;
    s.param_name = name;
    slots_.push_back(std::move(s));
    return Var{slots_.size() - 1};
  }

  const Array<T>& val(Var x) const {
    const Slot& s = slots_[x.id];
    return s.ext != nullptr ? *s.ext : s.val;
  }
  bool needs_grad(Var x) const { return slots_[x.id].needs; }

  // Gradient buffer (allocated zero on first use).
  Array<T>& grad(Var x) {
    Slot& s = slots_[x.id];
    if (!s.has_grad) {
      const Array<T>& v = val(x);
      s.grad.dims = v.dims;
      s.grad.v.assign(v.size(), T(0));
      s.has_grad = true;
    }
    return s.grad;
  }
  bool has_grad(Var x) const { return slots_[x.id].has_grad; }

  // --- elementwise --------------------------------------------------------

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    const Array<T>&av = val(a), &bv = val(b);
    Array<T> out;
    out.dims = av.dims;
    out.v.resize(av.size());
    ops().add(out.data(), av.data(), bv.data(), av.size());
    return push(std::move(out), [this, a, b](Var y) {
      const Array<T>& g = grad(y);
      if (needs_grad(a)) ops().axpy(grad(a).data(), T(1), g.data(), g.size());
      if (needs_grad(b)) ops().axpy(grad(b).data(), T(1), g.data(), g.size());
    }, needs_grad(a) || needs_grad(b));
  }

  Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    const Array<T>&av = val(a), &bv = val(b);
    Array<T> out;
    out.dims = av.dims;
    out.v.resize(av.size());
    ops().sub(out.data(), av.data(), bv.data(), av.size());
    return push(std::move(out), [this, a, b](Var y) {
      const Array<T>& g = grad(y);
      if (needs_grad(a)) ops().axpy(grad(a).data(), T(1), g.data(), g.size());
      if (needs_grad(b)) ops().axpy(grad(b).data(), T(-1), g.data(), g.size());
    }, needs_grad(a) || needs_grad(b));
  }

  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    const Array<T>&av = val(a), &bv = val(b);
    Array<T> out;
    out.dims = av.dims;
    out.v.resize(av.size());
    ops().mul(out.data(), av.data(), bv.data(), av.size());
    return push(std::move(out), [this, a, b](Var y) {
      const Array<T>& g = grad(y);
      if (needs_grad(a)) ops().fma_acc(grad(a).data(), g.data(), val(b).data(), g.size());
      if (needs_grad(b)) ops().fma_acc(grad(b).data(), g.data(), val(a).data(), g.size());
    }, needs_grad(a) || needs_grad(b));
  }

  Var scale(Var a, T c) {
    const Array<T>& av = val(a);
    Array<T> out;
    out.dims = av.dims;
    out.v.resize(av.size());
    ops().scale(out.data(), c, av.data(), av.size());
    return push(std::move(out), [this, a, c](Var y) {
      if (needs_grad(a)) ops().axpy(grad(a).data(), c, grad(y).data(), grad(y).size());
    }, needs_grad(a));
  }

  // --- linear algebra -----------------------------------------------------

  // c = op(a) * op(b), both 2-D row-major; op transposes the stored layout.
  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    const Array<T>&av = val(a), &bv = val(b);
    const size_t m = ta ? av.cols() : av.rows();
    const size_t ka = ta ? av.rows() : av.cols();
    const size_t kb = tb ? bv.cols() : bv.rows();
    const size_t n = tb ? bv.rows() : bv.cols();
    if (ka != kb) throw ContractError("matmul: inner dimension mismatch");
    Array<T> out({m, n});
    ops().gemm(ta, tb, m, n, ka, T(1), av.data(), av.cols(), bv.data(), bv.cols(), T(0),
               out.data(), n);
    return push(std::move(out), [this, a, b, ta, tb, m, n, ka](Var y) {
      const Array<T>& g = grad(y);
      if (needs_grad(a)) {
        Array<T>& da = grad(a);
        if (!ta) {
          // dA += dC * op(B)^T
          ops().gemm(false, !tb, m, ka, n, T(1), g.data(), n, val(b).data(), val(b).cols(),
                     T(1), da.data(), da.cols());
        } else {
          // A stored [k,m]; dA_stored += op(B) * dC^T
          ops().gemm(tb, true, ka, m, n, T(1), val(b).data(), val(b).cols(), g.data(), n,
                     T(1), da.data(), da.cols());
        }
      }
      if (needs_grad(b)) {
        Array<T>& db = grad(b);
        if (!tb) {
          // dB += op(A)^T * dC
          ops().gemm(!ta, false, ka, n, m, T(1), val(a).data(), val(a).cols(), g.data(), n,
                     T(1), db.data(), db.cols());
        } else {
          // B stored [n,k]; dB_stored += dC^T * op(A)
          ops().gemm(true, ta, n, ka, m, T(1), g.data(), n, val(a).data(), val(a).cols(),
                     T(1), db.data(), db.cols());
        }
      }
    }, needs_grad(a) || needs_grad(b));
  }

  // m [R,C] + v (size C) broadcast over rows.
  Var add_rowvec(Var m, Var vvar) {
    const Array<T>&mv = val(m), &vv = val(vvar);
    if (vv.size() != mv.cols()) throw ContractError("add_rowvec: width mismatch");
    Array<T> out = mv;
    for (size_t r = 0; r < mv.rows(); ++r)
      ops().add(out.data() + r * mv.cols(), mv.data() + r * mv.cols(), vv.data(), mv.cols());
    return push(std::move(out), [this, m, vvar](Var y) {
      const Array<T>& g = grad(y);
      const size_t rows = g.rows(), cols = g.cols();
      if (needs_grad(m)) ops().axpy(grad(m).data(), T(1), g.data(), g.size());
      if (needs_grad(vvar)) {
        Array<T>& dv = grad(vvar);
        for (size_t r = 0; r < rows; ++r)
          ops().axpy(dv.data(), T(1), g.data() + r * cols, cols);
      }
    }, needs_grad(m) || needs_grad(vvar));
  }

  // Row-wise affine layer normalization over the channel axis.
  Var layernorm(Var x, Var gamma, Var beta, T eps) {
    const Array<T>& xv = val(x);
    const size_t rows = xv.rows(), cols = xv.cols();
    if (val(gamma).size() != cols || val(beta).size() != cols)
      throw ContractError("layernorm: affine width mismatch");
    auto xhat = std::make_shared<Array<T>>(Array<T>({rows, cols}));
    auto invstd = std::make_shared<std::vector<T>>(rows);
    Array<T> out({rows, cols});
    for (size_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * cols;
      T mu = 0;
      for (size_t j = 0; j < cols; ++j) mu += xr[j];
      mu /= T(cols);
      T var = 0;
      for (size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= T(cols);
      T is = T(1) / std::sqrt(var + eps);
      (*invstd)[r] = is;
      T* hr = xhat->data() + r * cols;
      T* yr = out.data() + r * cols;
      const T* gv = val(gamma).data();
      const T* bv = val(beta).data();
      for (size_t j = 0; j < cols; ++j) {
        hr[j] = (xr[j] - mu) * is;
        yr[j] = gv[j] * hr[j] + bv[j];
      }
    }
    return push(std::move(out), [this, x, gamma, beta, xhat, invstd](Var y) {
      const Array<T>& g = grad(y);
      const size_t rows = g.rows(), cols = g.cols();
      const T* gv = val(gamma).data();
      for (size_t r = 0; r < rows; ++r) {
        const T* gr = g.data() + r * cols;
        const T* hr = xhat->data() + r * cols;
        if (needs_grad(gamma)) {
          T* dg = grad(gamma).data();
          for (size_t j = 0; j < cols; ++j) dg[j] += gr[j] * hr[j];
        }
        if (needs_grad(beta)) {
          T* db = grad(beta).data();
          for (size_t j = 0; j < cols; ++j) db[j] += gr[j];
        }
        if (needs_grad(x)) {
          T s1 = 0, s2 = 0;
          for (size_t j = 0; j < cols; ++j) {
            T dh = gr[j] * gv[j];
            s1 += dh;
            s2 += dh * hr[j];
          }
          const T is = (*invstd)[r];
          T* dx = grad(x).data() + r * cols;
          const T invn = T(1) / T(cols);
          for (size_t j = 0; j < cols; ++j) {
            T dh = gr[j] * gv[j];
            dx[j] += is * (dh - s1 * invn - hr[j] * s2 * invn);
          }
        }
      }
    }, needs_grad(x) || needs_grad(gamma) || needs_grad(beta));
  }

  Var gelu(Var x) {
    const Array<T>& xv = val(x);
    Array<T> out;
    out.dims = xv.dims;
    out.v.resize(xv.size());
    ops().gelu(out.data(), xv.data(), xv.size());
    return push(std::move(out), [this, x](Var y) {
      if (needs_grad(x))
        ops().gelu_grad(grad(x).data(), val(x).data(), grad(y).data(), val(x).size());
    }, needs_grad(x));
  }

  // Row-wise softmax; -inf entries get weight 0.
  Var softmax_rows(Var x) {
    Array<T> out = val(x);
    ops().softmax_rows(out.data(), out.rows(), out.cols());
    return push(std::move(out), [this, x](Var y) {
      if (!needs_grad(x)) return;
      const Array<T>&g = grad(y), &yv = val(y);
      const size_t rows = yv.rows(), cols = yv.cols();
      Array<T>& dx = grad(x);
      for (size_t r = 0; r < rows; ++r) {
        const T* yr = yv.data() + r * cols;
        const T* gr = g.data() + r * cols;
        T dot = ops().dot(yr, gr, cols);
        T* dr = dx.data() + r * cols;
        for (size_t j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
      }
    }, needs_grad(x));
  }

  // --- structure ----------------------------------------------------------

  Var slice_rows(Var x, size_t r0, size_t r1) {
    const Array<T>& xv = val(x);
    if (r0 > r1 || r1 > xv.rows()) throw ContractError("slice_rows: bad range");
    const size_t cols = xv.cols();
    Array<T> out({r1 - r0, cols});
    std::copy(xv.data() + r0 * cols, xv.data() + r1 * cols, out.data());
    return push(std::move(out), [this, x, r0](Var y) {
      if (!needs_grad(x)) return;
      const Array<T>& g = grad(y);
      ops().axpy(grad(x).data() + r0 * g.cols(), T(1), g.data(), g.size());
    }, needs_grad(x));
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty");
    const size_t cols = val(parts[0]).cols();
    size_t rows = 0;
    for (Var p : parts) {
      if (val(p).cols() != cols) throw ContractError("concat_rows: width mismatch");
      rows += val(p).rows();
    }
    Array<T> out({rows, cols});
    size_t r = 0;
    for (Var p : parts) {
      std::copy(val(p).data(), val(p).data() + val(p).size(), out.data() + r * cols);
      r += val(p).rows();
    }
    bool needs = false;
    for (Var p : parts) needs = needs || needs_grad(p);
    return push(std::move(out), [this, parts](Var y) {
      const Array<T>& g = grad(y);
      size_t r = 0;
      for (Var p : parts) {
        const size_t sz = val(p).size();
        if (needs_grad(p)) ops().axpy(grad(p).data(), T(1), g.data() + r * g.cols(), sz);
        r += val(p).rows();
      }
    }, needs);
  }

  Var slice_cols(Var x, size_t c0, size_t c1) {
    const Array<T>& xv = val(x);
    if (c0 > c1 || c1 > xv.cols()) throw ContractError("slice_cols: bad range");
    const size_t rows = xv.rows(), cols = xv.cols(), w = c1 - c0;
    Array<T> out({rows, w});
    for (size_t r = 0; r < rows; ++r)
      std::copy(xv.data() + r * cols + c0, xv.data() + r * cols + c1, out.data() + r * w);
    return push(std::move(out), [this, x, c0](Var y) {
      if (!needs_grad(x)) return;
      const Array<T>& g = grad(y);
      Array<T>& dx = grad(x);
      const size_t w = g.cols(), cols = dx.cols();
      for (size_t r = 0; r < g.rows(); ++r)
        ops().axpy(dx.data() + r * cols + c0, T(1), g.data() + r * w, w);
    }, needs_grad(x));
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty");
    const size_t rows = val(parts[0]).rows();
    size_t cols = 0;
    for (Var p : parts) {
      if (val(p).rows() != rows) throw ContractError("concat_cols: height mismatch");
      cols += val(p).cols();
    }
    Array<T> out({rows, cols});
    size_t c = 0;
    for (Var p : parts) {
      const Array<T>& pv = val(p);
      for (size_t r = 0; r < rows; ++r)
        std::copy(pv.data() + r * pv.cols(), pv.data() + (r + 1) * pv.cols(),
                  out.data() + r * cols + c);
      c += pv.cols();
    }
    bool needs = false;
    for (Var p : parts) needs = needs || needs_grad(p);
    return push(std::move(out), [this, parts](Var y) {
      const Array<T>& g = grad(y);
      const size_t rows = g.rows(), cols = g.cols();
      size_t c = 0;
      for (Var p : parts) {
        const size_t w = val(p).cols();
        if (needs_grad(p)) {
          Array<T>& dp = grad(p);
          for (size_t r = 0; r < rows; ++r)
            ops().axpy(dp.data() + r * w, T(1), g.data() + r * cols + c, w);
        }
        c += w;
      }
    }, needs);
  }

  // out[i,:] = x[idx[i],:]; backward scatter-adds.
  Var gather_rows(Var x, std::vector<size_t> idx) {
    const Array<T>& xv = val(x);
    const size_t cols = xv.cols();
    for (size_t i : idx)
      if (i >= xv.rows()) throw ContractError("gather_rows: index out of range");
    Array<T> out({idx.size(), cols});
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy(xv.data() + idx[i] * cols, xv.data() + (idx[i] + 1) * cols,
                out.data() + i * cols);
    auto ip = std::make_shared<std::vector<size_t>>(std::move(idx));
    return push(std::move(out), [this, x, ip](Var y) {
      if (!needs_grad(x)) return;
      const Array<T>& g = grad(y);
      Array<T>& dx = grad(x);
      const size_t cols = g.cols();
      for (size_t i = 0; i < ip->size(); ++i)
        ops().axpy(dx.data() + (*ip)[i] * cols, T(1), g.data() + i * cols, cols);
    }, needs_grad(x));
  }

  // Rebuild a full token set from visible rows plus a shared mask vector:
  // out[visible_idx[k],:] = visible[k,:]; every other row = mask_token.
  Var scatter_assemble(Var visible, Var mask_token, std::vector<size_t> visible_idx,
                       size_t n_total) {
    const Array<T>&vv = val(visible), &mv = val(mask_token);
    const size_t cols = vv.cols();
    if (mv.size() != cols) throw ContractError("scatter_assemble: mask width mismatch");
    if (vv.rows() != visible_idx.size())
      throw ContractError("scatter_assemble: row/index count mismatch");
    std::vector<char> vis(n_total, 0);
    for (size_t i : visible_idx) {
      if (i >= n_total) throw ContractError("scatter_assemble: index out of range");
      vis[i] = 1;
    }
    Array<T> out({n_total, cols});
    for (size_t r = 0; r < n_total; ++r)
      std::copy(mv.data(), mv.data() + cols, out.data() + r * cols);
    for (size_t k = 0; k < visible_idx.size(); ++k)
      std::copy(vv.data() + k * cols, vv.data() + (k + 1) * cols,
                out.data() + visible_idx[k] * cols);
    auto ip = std::make_shared<std::vector<size_t>>(std::move(visible_idx));
    auto vp = std::make_shared<std::vector<char>>(std::move(vis));
    return push(std::move(out), [this, visible, mask_token, ip, vp, n_total](Var y) {
      const Array<T>& g = grad(y);
      const size_t cols = g.cols();
      if (needs_grad(visible)) {
        Array<T>& dv = grad(visible);
        for (size_t k = 0; k < ip->size(); ++k)
          ops().axpy(dv.data() + k * cols, T(1), g.data() + (*ip)[k] * cols, cols);
      }
      if (needs_grad(mask_token)) {
        Array<T>& dm = grad(mask_token);
        for (size_t r = 0; r < n_total; ++r)
          if (!(*vp)[r]) ops().axpy(dm.data(), T(1), g.data() + r * cols, cols);
      }
    }, needs_grad(visible) || needs_grad(mask_token));
  }

  // Bicubic resampling of a token grid: x rows are grid cells (row-major
  // gin.rows x gin.cols), channels resampled independently.
  Var grid_resample(Var x, GridShape gin, GridShape gout) {
    const Array<T>& xv = val(x);
    if (xv.rows() != gin.count()) throw ContractError("grid_resample: grid/token mismatch");
    const size_t cols = xv.cols();
    auto tr = std::make_shared<Taps1D>(bicubic_taps(gin.rows, gout.rows));
    auto tc = std::make_shared<Taps1D>(bicubic_taps(gin.cols, gout.cols));
    Array<T> out({gout.count(), cols});
    for (size_t orow = 0; orow < gout.rows; ++orow) {
      for (size_t ocol = 0; ocol < gout.cols; ++ocol) {
        T* dst = out.data() + (orow * gout.cols + ocol) * cols;
        for (int ki = 0; ki < 4; ++ki) {
          const double wr = tr->w[4 * orow + ki];
          const size_t ri = size_t(tr->idx[4 * orow + ki]);
          for (int kj = 0; kj < 4; ++kj) {
            const T w = T(wr * tc->w[4 * ocol + kj]);
            const size_t ci = size_t(tc->idx[4 * ocol + kj]);
            ops().axpy(dst, w, xv.data() + (ri * gin.cols + ci) * cols, cols);
          }
        }
      }
    }
    return push(std::move(out), [this, x, tr, tc, gin, gout](Var y) {
      if (!needs_grad(x)) return;
      const Array<T>& g = grad(y);
      Array<T>& dx = grad(x);
      const size_t cols = g.cols();
      for (size_t orow = 0; orow < gout.rows; ++orow) {
        for (size_t ocol = 0; ocol < gout.cols; ++ocol) {
          const T* src = g.data() + (orow * gout.cols + ocol) * cols;
          for (int ki = 0; ki < 4; ++ki) {
            const double wr = tr->w[4 * orow + ki];
            const size_t ri = size_t(tr->idx[4 * orow + ki]);
            for (int kj = 0; kj < 4; ++kj) {
              const T w = T(wr * tc->w[4 * ocol + kj]);
              const size_t ci = size_t(tc->idx[4 * ocol + kj]);
              ops().axpy(dx.data() + (ri * gin.cols + ci) * cols, w, src, cols);
            }
          }
        }
      }
    }, needs_grad(x));
  }

  // --- reductions ---------------------------------------------------------

  Var sum(Var x) {
    const Array<T>& xv = val(x);
    Array<T> out({1});
    T s = 0;
    for (size_t i = 0; i < xv.size(); ++i) s += xv[i];
    out[0] = s;
    return push(std::move(out), [this, x](Var y) {
      if (!needs_grad(x)) return;
      const T g = grad(y)[0];
      Array<T>& dx = grad(x);
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    }, needs_grad(x));
  }

  // sum((a-b)^2), scalar output.
  Var sum_sq_diff(Var a, Var b) {
    require_same_shape(a, b, "sum_sq_diff");
    const Array<T>&av = val(a), &bv = val(b);
    Array<T> out({1});
    out[0] = ops().sumsq_diff(av.data(), bv.data(), av.size());
    return push(std::move(out), [this, a, b](Var y) {
      const T g = grad(y)[0];
      const Array<T>&av = val(a), &bv = val(b);
      if (needs_grad(a)) {
        Array<T>& da = grad(a);
        for (size_t i = 0; i < av.size(); ++i) da[i] += T(2) * g * (av[i] - bv[i]);
      }
      if (needs_grad(b)) {
        Array<T>& db = grad(b);
        for (size_t i = 0; i < av.size(); ++i) db[i] -= T(2) * g * (av[i] - bv[i]);
      }
    }, needs_grad(a) || needs_grad(b));
  }

  // Mean token-level cross entropy; rows with target == ignore_index are
  // skipped. logits [L,V], targets length L.
  Var cross_entropy_rows(Var logits, std::vector<int> targets, int ignore_index) {
    const Array<T>& lv = val(logits);
    const size_t rows = lv.rows(), cols = lv.cols();
    if (targets.size() != rows) throw ContractError("cross_entropy: target count mismatch");
    auto probs = std::make_shared<Array<T>>(lv);
    ops().softmax_rows(probs->data(), rows, cols);
    size_t cnt = 0;
    double loss = 0;
    for (size_t r = 0; r < rows; ++r) {
      int t = targets[r];
      if (t == ignore_index) continue;
      if (t < 0 || size_t(t) >= cols) throw ContractError("cross_entropy: target out of range");
      ++cnt;
      // recompute log prob stably from logits
      const T* xr = lv.data() + r * cols;
      T mx = xr[0];
      for (size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
      double lse = 0;
      for (size_t j = 0; j < cols; ++j) lse += std::exp(double(xr[j] - mx));
      loss += std::log(lse) + double(mx) - double(xr[t]);
    }
    if (cnt == 0) throw ContractError("cross_entropy: no scored positions");
    Array<T> out({1});
    out[0] = T(loss / double(cnt));
    auto tp = std::make_shared<std::vector<int>>(std::move(targets));
    return push(std::move(out), [this, logits, probs, tp, ignore_index, cnt](Var y) {
      if (!needs_grad(logits)) return;
      const T g = grad(y)[0] / T(cnt);
      Array<T>& dl = grad(logits);
      const size_t cols = dl.cols();
      for (size_t r = 0; r < tp->size(); ++r) {
        int t = (*tp)[r];
        if (t == ignore_index) continue;
        T* dr = dl.data() + r * cols;
        const T* pr = probs->data() + r * cols;
        for (size_t j = 0; j < cols; ++j) dr[j] += g * pr[j];
        dr[size_t(t)] -= g;
      }
    }, needs_grad(logits));
  }

  // --- engine -------------------------------------------------------------

  // Reverse sweep from a scalar loss.
  void backward(Var loss) {
    if (val(loss).size() != 1) throw ContractError("backward: loss must be scalar");
    grad(loss)[0] = T(1);
    for (size_t i = slots_.size(); i-- > 0;) {
      Slot& s = slots_[i];
      if (s.back && s.has_grad) s.back(Var{i});
    }
  }

  // Add parameter-leaf gradients into `gs` (only names present there).
  void export_param_grads(GradStore<T>& gs) {
    for (size_t i = 0; i < slots_.size(); ++i) {
      Slot& s = slots_[i];
      if (!s.param_name.empty() && s.has_grad && gs.has(s.param_name))
        gs.accumulate(s.param_name, s.grad);
    }
  }

  size_t node_count() const { return slots_.size(); }

 private:
  struct Slot {
    Array<T> val;
    const Array<T>* ext = nullptr;
    Array<T> grad;
    bool has_grad = false;
    bool needs = false;
    std::function<void(Var)> back;
    std::string param_name;
  };

  static const kernels::Ops<T>& ops() { return kernels::active<T>(); }

  Var push(Array<T> v, std::function<void(Var)> back, bool needs) {
    Slot s;
    s.val = std::move(v);
    s.needs = needs;
    if (needs) s.back = std::move(back);
    slots_.push_back(std::move(s));
    return Var{slots_.size() - 1};
  }

  void require_same_shape(Var a, Var b, const char* op) {
    if (!val(a).same_shape(val(b)))
      throw ContractError(std::string(op) + ": shape mismatch");
  }

  std::vector<Slot> slots_;
};

}  // namespace mnsp
