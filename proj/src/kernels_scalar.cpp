// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference kernels. Plain loops, no reassociation tricks: these define the
// semantics every SIMD variant is equivalence-tested against.

#include <cmath>
#include <limits>

#include "mnsp/kernels.hpp"

namespace mnsp::kernels {

namespace {

template <class T>
void gemm_ref(bool ta, bool tb, size_t m, size_t n, size_t k, T alpha, const T* a,
              size_t lda, const T* b, size_t ldb, T beta, T* c, size_t ldc) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (size_t p = 0; p < k; ++p) {
        T av = ta ? a[p * lda + i] : a[i * lda + p];
        T bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      T& out = c[i * ldc + j];
      out = beta == T(0) ? alpha * acc : beta * out + alpha * acc;
    }
  }
}

template <class T>
void softmax_rows_ref(T* x, size_t rows, size_t cols) {
  for (size_t r = 0; r < rows; ++r) {
    T* row = x + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (size_t j = 0; j < cols; ++j)
      if (row[j] > mx) mx = row[j];
    T sum = 0;
    for (size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    T inv = T(1) / sum;
    for (size_t j = 0; j < cols; ++j) row[j] *= inv;
  }
}

// tanh-form GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <class T>
inline T gelu_one(T x) {
  const T c0 = T(0.7978845608028653558798921198687);
  const T c1 = T(0.044715);
  return T(0.5) * x * (T(1) + std::tanh(c0 * (x + c1 * x * x * x)));
}

template <class T>
inline T gelu_grad_one(T x) {
  const T c0 = T(0.7978845608028653558798921198687);
  const T c1 = T(0.044715);
  T u = c0 * (x + c1 * x * x * x);
  T t = std::tanh(u);
  T du = c0 * (T(1) + T(3) * c1 * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <class T>
void gelu_ref(T* y, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

template <class T>
void gelu_grad_ref(T* dx, const T* x, const T* dy, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] += gelu_grad_one(x[i]) * dy[i];
}

template <class T>
void add_ref(T* y, const T* a, const T* b, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
template <class T>
void sub_ref(T* y, const T* a, const T* b, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}
template <class T>
void mul_ref(T* y, const T* a, const T* b, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
template <class T>
void axpy_ref(T* y, T alpha, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
template <class T>
void scale_ref(T* y, T alpha, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}
template <class T>
void fma_acc_ref(T* y, const T* a, const T* b, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}
template <class T>
T dot_ref(const T* a, const T* b, size_t n) {
  T s = 0;
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}
template <class T>
T sumsq_diff_ref(const T* a, const T* b, size_t n) {
  T s = 0;
  for (size_t i = 0; i < n; ++i) {
    T d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

template <class T>
Ops<T> make_scalar_ops() {
  Ops<T> o;
  o.gemm = &gemm_ref<T>;
  o.softmax_rows = &softmax_rows_ref<T>;
  o.gelu = &gelu_ref<T>;
  o.gelu_grad = &gelu_grad_ref<T>;
  o.add = &add_ref<T>;
  o.sub = &sub_ref<T>;
  o.mul = &mul_ref<T>;
  o.axpy = &axpy_ref<T>;
  o.scale = &scale_ref<T>;
  o.fma_acc = &fma_acc_ref<T>;
  o.dot = &dot_ref<T>;
  o.sumsq_diff = &sumsq_diff_ref<T>;
  return o;
}

}  // namespace

const Ops<float>& scalar_ops_f32() {
  static const Ops<float> t = make_scalar_ops<float>();
  return t;
}
const Ops<double>& scalar_ops_f64() {
  static const Ops<double> t = make_scalar_ops<double>();
  return t;
}

}  // namespace mnsp::kernels
