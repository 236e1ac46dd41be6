// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "mnsp/common.hpp"

namespace mnsp {

// Dense row-major array, at most rank 2 in practice (rank 1 is [n] == [1, n]
// where convenient). Value-semantic; all tensors in the lab are these.
template <class T>
struct Array {
  std::vector<size_t> dims;
  std::vector<T> v;

  Array() = default;
  Array(std::initializer_list<size_t> d) : dims(d) { v.assign(count(dims), T(0)); }
  explicit Array(const std::vector<size_t>& d) : dims(d) { v.assign(count(dims), T(0)); }

  static size_t count(const std::vector<size_t>& d) {
    size_t n = 1;
    for (size_t x : d) n *= x;
    return n;
  }

  static Array zeros(size_t r, size_t c) { return Array({r, c}); }
  static Array full(size_t r, size_t c, T x) {
    Array a({r, c});
    for (auto& e : a.v) e = x;
    return a;
  }

  size_t size() const { return v.size(); }
  size_t rank() const { return dims.size(); }
  size_t rows() const { return dims.empty() ? 0 : dims[0]; }
  size_t cols() const { return dims.size() < 2 ? (dims.empty() ? 0 : 1) : dims[1]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& at(size_t r, size_t c) { return v[r * cols() + c]; }
  const T& at(size_t r, size_t c) const { return v[r * cols() + c]; }
  T& operator[](size_t i) { return v[i]; }
  const T& operator[](size_t i) const { return v[i]; }

  bool same_shape(const Array& o) const { return dims == o.dims; }

  void fill(T x) {
    for (auto& e : v) e = x;
  }

  template <class U>
  Array<U> cast() const {
    Array<U> out;
    out.dims = dims;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
    return out;
  }
};

struct GridShape {
  size_t rows = 0;
  size_t cols = 0;
  size_t count() const { return rows * cols; }
  bool operator==(const GridShape& o) const { return rows == o.rows && cols == o.cols; }
  bool operator!=(const GridShape& o) const { return !(*this == o); }
};

}  // namespace mnsp
