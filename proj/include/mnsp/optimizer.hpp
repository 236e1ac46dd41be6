// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "mnsp/common.hpp"
#include "mnsp/params.hpp"

namespace mnsp {

// Linear ramp 0 -> base over `warmup_steps`, then cosine decay toward zero
// across the remaining steps.
inline double lr_schedule(size_t step, size_t total_steps, size_t warmup_steps,
                          double base_lr) {
  if (total_steps <= warmup_steps)
    throw ConfigError("lr_schedule: total_steps must exceed warmup_steps");
  if (step >= total_steps) throw ConfigError("lr_schedule: step out of range");
  if (step < warmup_steps) return base_lr * double(step) / double(warmup_steps);
  const double progress =
      double(step - warmup_steps) / double(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Decoupled weight decay applies to weight matrices only — projection,
// attention, and mlp kernels — never to biases, normalization affines,
// positional/CLS/mask-token embeddings.
inline bool weight_decay_applies(const std::string& name) {
  const size_t dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf == "w" || leaf == "w1" || leaf == "w2" || leaf == "wq" ||
         leaf == "wk" || leaf == "wv" || leaf == "wo";
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping
};

// Adam with decoupled weight decay over a ParamStore. Moment buffers share
// the store's layout; `step` clips the incoming gradients in place (they are
// recomputed from scratch every training step anyway).
template <class T>
struct AdamW {
  ParamStore<T>* ps;
  AdamWConfig cfg;
  GradStore<T> m, v;
  size_t t = 0;

  explicit AdamW(ParamStore<T>& params, AdamWConfig c = AdamWConfig{})
      : ps(&params), cfg(c), m(params), v(params) {}

  void step(GradStore<T>& grads, double lr) {
    if (cfg.clip_norm > 0.0) {
      const double norm = grads.global_norm();
      if (norm > cfg.clip_norm) grads.scale_all(T(cfg.clip_norm / norm));
    }
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
    for (const auto& name : ps->order) {
      Array<T>& p = ps->at(name);
      const Array<T>& g = grads.at(name);
      Array<T>& mm = m.at(name);
      Array<T>& vv = v.at(name);
      const bool decay = cfg.weight_decay > 0.0 && weight_decay_applies(name);
      for (size_t i = 0; i < p.size(); ++i) {
        mm[i] = T(cfg.beta1) * mm[i] + T(1.0 - cfg.beta1) * g[i];
        vv[i] = T(cfg.beta2) * vv[i] + T(1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = double(mm[i]) / bc1;
        const double vhat = double(vv[i]) / bc2;
        double upd = mhat / (std::sqrt(vhat) + cfg.eps);
        if (decay) upd += cfg.weight_decay * double(p[i]);
        p[i] = T(double(p[i]) - lr * upd);
      }
    }
  }
};

}  // namespace mnsp
