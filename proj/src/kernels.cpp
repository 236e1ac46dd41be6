// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "mnsp/kernels.hpp"

#include <cstdlib>
#include <string>

#include "mnsp/common.hpp"

namespace mnsp::kernels {

// Defined in kernels_scalar.cpp / kernels_avx2.cpp.
const Ops<float>& scalar_ops_f32();
const Ops<double>& scalar_ops_f64();
const Ops<float>* avx2_ops_f32();

namespace {
Backend g_backend = Backend::kScalar;
}

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
  return avx2_ops_f32() != nullptr && __builtin_cpu_supports("avx2") &&
         __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar: return "scalar";
    case Backend::kAvx2: return "avx2";
  }
  return "?";
}

Backend active_backend() { return g_backend; }

void select_backend(Backend b) {
  if (b == Backend::kAvx2 && !avx2_supported())
    throw ConfigError("kernel backend 'avx2' is not supported on this host");
  g_backend = b;
}

void select_backend_auto() {
  const char* env = std::getenv("MNSP_KERNELS");
  if (env != nullptr && *env != '\0') {
    std::string v(env);
    if (v == "scalar") {
      select_backend(Backend::kScalar);
    } else if (v == "avx2") {
      select_backend(Backend::kAvx2);
    } else {
      throw ConfigError("MNSP_KERNELS must be 'scalar' or 'avx2', got '" + v + "'");
    }
    return;
  }
  select_backend(avx2_supported() ? Backend::kAvx2 : Backend::kScalar);
}

const Ops<float>& f32_table(Backend b) {
  if (b == Backend::kAvx2) {
    const Ops<float>* t = avx2_ops_f32();
    if (t != nullptr) return *t;
  }
  return scalar_ops_f32();
}

// f64 has no vector variant; every backend maps to the reference table.
const Ops<double>& f64_table(Backend) { return scalar_ops_f64(); }

const Ops<float>& f32() { return f32_table(g_backend); }
const Ops<double>& f64() { return f64_table(g_backend); }

}  // namespace mnsp::kernels
