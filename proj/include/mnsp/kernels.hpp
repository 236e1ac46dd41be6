// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace mnsp::kernels {

// The arithmetic inner loops of the whole lab live behind this table: GEMM,
// row softmax, GELU, and the elementwise/reduction helpers the autodiff tape
// is built from. Each op has a scalar reference implementation and may have
// SIMD variants; the active variant is chosen at runtime (cpuid + override).
enum class Backend { kScalar, kAvx2 };

template <class T>
struct Ops {
  // c = alpha * op(a) * op(b) + beta * c, row-major, op = optional transpose.
  void (*gemm)(bool ta, bool tb, size_t m, size_t n, size_t k, T alpha, const T* a,
               size_t lda, const T* b, size_t ldb, T beta, T* c, size_t ldc);
  // In-place row-wise softmax; rows containing -inf entries get weight 0 there.
  void (*softmax_rows)(T* x, size_t rows, size_t cols);
  // y = gelu(x), tanh form.
  void (*gelu)(T* y, const T* x, size_t n);
  // dx += gelu'(x) * dy
  void (*gelu_grad)(T* dx, const T* x, const T* dy, size_t n);
  void (*add)(T* y, const T* a, const T* b, size_t n);
  void (*sub)(T* y, const T* a, const T* b, size_t n);
  void (*mul)(T* y, const T* a, const T* b, size_t n);
  // y += alpha * x
  void (*axpy)(T* y, T alpha, const T* x, size_t n);
  // y = alpha * x
  void (*scale)(T* y, T alpha, const T* x, size_t n);
  // y += a * b elementwise
  void (*fma_acc)(T* y, const T* a, const T* b, size_t n);
  T (*dot)(const T* a, const T* b, size_t n);
  // sum((a - b)^2)
  T (*sumsq_diff)(const T* a, const T* b, size_t n);
};

bool avx2_supported();
Backend active_backend();
const char* backend_name(Backend b);

// Throws ConfigError if the backend is not usable on this machine.
void select_backend(Backend b);
// cpuid pick, overridable with MNSP_KERNELS=scalar|avx2.
void select_backend_auto();

// Active tables. f64 currently has only the scalar backend; it is the test
// dtype, where bit-stable reference arithmetic matters more than speed.
const Ops<float>& f32();
const Ops<double>& f64();

// Direct table access regardless of the active selection (equivalence tests).
const Ops<float>& f32_table(Backend b);
const Ops<double>& f64_table(Backend b);

template <class T>
const Ops<T>& active();
template <>
inline const Ops<float>& active<float>() {
  return f32();
}
template <>
inline const Ops<double>& active<double>() {
  return f64();
}

}  // namespace mnsp::kernels
