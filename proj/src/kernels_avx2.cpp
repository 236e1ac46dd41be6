// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2+FMA variants of the f32 kernels. This translation unit is compiled
// with -mavx2 -mfma; callers must gate on kernels::avx2_supported().

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "mnsp/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace mnsp::kernels {
namespace {

inline float hsum256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

inline float hmax256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_max_ps(lo, hi);
  lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
  return _mm_cvtss_f32(lo);
}

// exp polynomial in the cephes style; |rel err| < 2 ulp on the softmax range.
inline __m256 exp256(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647949f);
  const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 one = _mm256_set1_ps(1.0f);

  x = _mm256_max_ps(_mm256_min_ps(x, hi), lo);
  __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  x = _mm256_fnmadd_ps(fx, c1, x);
  x = _mm256_fnmadd_ps(fx, c2, x);

  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  __m256 z = _mm256_mul_ps(x, x);
  y = _mm256_fmadd_ps(y, z, _mm256_add_ps(x, one));

  __m256i imm = _mm256_cvtps_epi32(fx);
  imm = _mm256_add_epi32(imm, _mm256_set1_epi32(0x7f));
  imm = _mm256_slli_epi32(imm, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(imm));
}

inline __m256 tanh256(__m256 x) {
  // tanh(x) = 1 - 2 / (exp(2x) + 1)
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 two = _mm256_set1_ps(2.0f);
  __m256 e = exp256(_mm256_mul_ps(x, two));
  return _mm256_sub_ps(one, _mm256_div_ps(two, _mm256_add_ps(e, one)));
}

// ---------------------------------------------------------------------------
// GEMM: canonicalize transposes into contiguous copies, then a 6x16 FMA
// microkernel over row-major operands. Matrices here are small (tokens x
// channels), so no cache blocking beyond the register tile.
// ---------------------------------------------------------------------------

void transpose_copy(const float* src, size_t rows, size_t cols, size_t ld, float* dst) {
  // dst becomes [cols, rows] contiguous
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * ld + j];
}

void gemm_core(size_t m, size_t n, size_t k, float alpha, const float* a, size_t lda,
               const float* b, size_t ldb, float beta, float* c, size_t ldc) {
  const size_t n16 = n & ~size_t(15);
  size_t i = 0;
  for (; i + 6 <= m; i += 6) {
    for (size_t j = 0; j < n16; j += 16) {
      __m256 acc[6][2];
      for (int r = 0; r < 6; ++r) {
        acc[r][0] = _mm256_setzero_ps();
        acc[r][1] = _mm256_setzero_ps();
      }
      const float* bp = b + j;
      for (size_t p = 0; p < k; ++p, bp += ldb) {
        __m256 b0 = _mm256_loadu_ps(bp);
        __m256 b1 = _mm256_loadu_ps(bp + 8);
        for (int r = 0; r < 6; ++r) {
          __m256 av = _mm256_set1_ps(a[(i + r) * lda + p]);
          acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
          acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
        }
      }
      const __m256 valpha = _mm256_set1_ps(alpha);
      for (int r = 0; r < 6; ++r) {
        float* cp = c + (i + r) * ldc + j;
        __m256 o0 = _mm256_mul_ps(acc[r][0], valpha);
        __m256 o1 = _mm256_mul_ps(acc[r][1], valpha);
        if (beta != 0.0f) {
          const __m256 vbeta = _mm256_set1_ps(beta);
          o0 = _mm256_fmadd_ps(vbeta, _mm256_loadu_ps(cp), o0);
          o1 = _mm256_fmadd_ps(vbeta, _mm256_loadu_ps(cp + 8), o1);
        }
        _mm256_storeu_ps(cp, o0);
        _mm256_storeu_ps(cp + 8, o1);
      }
    }
  }
  // leftover rows: 1x16 kernel
  for (; i < m; ++i) {
    for (size_t j = 0; j < n16; j += 16) {
      __m256 a0 = _mm256_setzero_ps();
      __m256 a1 = _mm256_setzero_ps();
      const float* bp = b + j;
      for (size_t p = 0; p < k; ++p, bp += ldb) {
        __m256 av = _mm256_set1_ps(a[i * lda + p]);
        a0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp), a0);
        a1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + 8), a1);
      }
      float* cp = c + i * ldc + j;
      const __m256 valpha = _mm256_set1_ps(alpha);
      __m256 o0 = _mm256_mul_ps(a0, valpha);
      __m256 o1 = _mm256_mul_ps(a1, valpha);
      if (beta != 0.0f) {
        const __m256 vbeta = _mm256_set1_ps(beta);
        o0 = _mm256_fmadd_ps(vbeta, _mm256_loadu_ps(cp), o0);
        o1 = _mm256_fmadd_ps(vbeta, _mm256_loadu_ps(cp + 8), o1);
      }
      _mm256_storeu_ps(cp, o0);
      _mm256_storeu_ps(cp + 8, o1);
    }
  }
  // leftover columns: scalar
  if (n16 < n) {
    for (size_t r = 0; r < m; ++r) {
      for (size_t j = n16; j < n; ++j) {
        float acc = 0.0f;
        const float* ap = a + r * lda;
        const float* bp = b + j;
        for (size_t p = 0; p < k; ++p) acc += ap[p] * bp[p * ldb];
        float& out = c[r * ldc + j];
        out = beta == 0.0f ? alpha * acc : beta * out + alpha * acc;
      }
    }
  }
}

void gemm_avx2(bool ta, bool tb, size_t m, size_t n, size_t k, float alpha, const float* a,
               size_t lda, const float* b, size_t ldb, float beta, float* c, size_t ldc) {
  static thread_local std::vector<float> sa, sb;
  const float* ap = a;
  const float* bp = b;
  size_t la = lda, lb = ldb;
  if (ta) {
    sa.resize(m * k);
    transpose_copy(a, k, m, lda, sa.data());  // stored [k,m] -> contiguous [m,k]
    ap = sa.data();
    la = k;
  }
  if (tb) {
    sb.resize(k * n);
    transpose_copy(b, n, k, ldb, sb.data());  // stored [n,k] -> contiguous [k,n]
    bp = sb.data();
    lb = n;
  }
  gemm_core(m, n, k, alpha, ap, la, bp, lb, beta, c, ldc);
}

void softmax_rows_avx2(float* x, size_t rows, size_t cols) {
  const size_t c8 = cols & ~size_t(7);
  for (size_t r = 0; r < rows; ++r) {
    float* row = x + r * cols;
    float mx = -std::numeric_limits<float>::infinity();
    if (c8) {
      __m256 vmx = _mm256_set1_ps(mx);
      for (size_t j = 0; j < c8; j += 8) vmx = _mm256_max_ps(vmx, _mm256_loadu_ps(row + j));
      mx = hmax256(vmx);
    }
    for (size_t j = c8; j < cols; ++j)
      if (row[j] > mx) mx = row[j];

    float sum = 0.0f;
    {
      __m256 vmxb = _mm256_set1_ps(mx);
      __m256 vsum = _mm256_setzero_ps();
      for (size_t j = 0; j < c8; j += 8) {
        __m256 e = exp256(_mm256_sub_ps(_mm256_loadu_ps(row + j), vmxb));
        _mm256_storeu_ps(row + j, e);
        vsum = _mm256_add_ps(vsum, e);
      }
      sum = hsum256(vsum);
    }
    for (size_t j = c8; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const float inv = 1.0f / sum;
    __m256 vinv = _mm256_set1_ps(inv);
    for (size_t j = 0; j < c8; j += 8)
      _mm256_storeu_ps(row + j, _mm256_mul_ps(_mm256_loadu_ps(row + j), vinv));
    for (size_t j = c8; j < cols; ++j) row[j] *= inv;
  }
}

void gelu_avx2(float* y, const float* x, size_t n) {
  const __m256 c0 = _mm256_set1_ps(0.79788456080286536f);
  const __m256 c1 = _mm256_set1_ps(0.044715f);
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 v = _mm256_loadu_ps(x + i);
    __m256 v3 = _mm256_mul_ps(_mm256_mul_ps(v, v), v);
    __m256 u = _mm256_mul_ps(c0, _mm256_fmadd_ps(c1, v3, v));
    __m256 t = tanh256(u);
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_mul_ps(half, v), _mm256_add_ps(one, t)));
  }
  for (; i < n; ++i) {
    float v = x[i];
    y[i] = 0.5f * v * (1.0f + std::tanh(0.79788456080286536f * (v + 0.044715f * v * v * v)));
  }
}

void gelu_grad_avx2(float* dx, const float* x, const float* dy, size_t n) {
  const __m256 c0 = _mm256_set1_ps(0.79788456080286536f);
  const __m256 c1x3 = _mm256_set1_ps(3.0f * 0.044715f);
  const __m256 c1 = _mm256_set1_ps(0.044715f);
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 v = _mm256_loadu_ps(x + i);
    __m256 v2 = _mm256_mul_ps(v, v);
    __m256 u = _mm256_mul_ps(c0, _mm256_fmadd_ps(c1, _mm256_mul_ps(v2, v), v));
    __m256 t = tanh256(u);
    __m256 du = _mm256_mul_ps(c0, _mm256_fmadd_ps(c1x3, v2, one));
    __m256 sech2 = _mm256_sub_ps(one, _mm256_mul_ps(t, t));
    __m256 g = _mm256_fmadd_ps(_mm256_mul_ps(half, v), _mm256_mul_ps(sech2, du),
                               _mm256_mul_ps(half, _mm256_add_ps(one, t)));
    __m256 acc = _mm256_fmadd_ps(g, _mm256_loadu_ps(dy + i), _mm256_loadu_ps(dx + i));
    _mm256_storeu_ps(dx + i, acc);
  }
  for (; i < n; ++i) {
    float v = x[i];
    float u = 0.79788456080286536f * (v + 0.044715f * v * v * v);
    float t = std::tanh(u);
    float du = 0.79788456080286536f * (1.0f + 3.0f * 0.044715f * v * v);
    dx[i] += (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du) * dy[i];
  }
}

void add_avx2(float* y, const float* a, const float* b, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}
void sub_avx2(float* y, const float* a, const float* b, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}
void mul_avx2(float* y, const float* a, const float* b, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}
void axpy_avx2(float* y, float alpha, const float* x, size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}
void scale_avx2(float* y, float alpha, const float* x, size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = alpha * x[i];
}
void fma_acc_avx2(float* y, const float* a, const float* b, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(
        y + i, _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a[i] * b[i];
}
float dot_avx2(const float* a, const float* b, size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  float s = hsum256(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}
float sumsq_diff_avx2(const float* a, const float* b, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    acc = _mm256_fmadd_ps(d, d, acc);
  }
  float s = hsum256(acc);
  for (; i < n; ++i) {
    float d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

const Ops<float>* avx2_ops_f32() {
  static const Ops<float> t = [] {
    Ops<float> o;
    o.gemm = &gemm_avx2;
    o.softmax_rows = &softmax_rows_avx2;
    o.gelu = &gelu_avx2;
    o.gelu_grad = &gelu_grad_avx2;
    o.add = &add_avx2;
    o.sub = &sub_avx2;
    o.mul = &mul_avx2;
    o.axpy = &axpy_avx2;
    o.scale = &scale_avx2;
    o.fma_acc = &fma_acc_avx2;
    o.dot = &dot_avx2;
    o.sumsq_diff = &sumsq_diff_avx2;
    return o;
  }();
  return &t;
}

}  // namespace mnsp::kernels

#else  // no AVX2 at compile time

namespace mnsp::kernels {
const Ops<float>* avx2_ops_f32() { return nullptr; }
}  // namespace mnsp::kernels

#endif
