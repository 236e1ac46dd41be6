// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "mnsp/array.hpp"
#include "mnsp/common.hpp"

namespace mnsp {

// Named parameter tensors with a stable (insertion) order. The order defines
// optimizer traversal, checkpoint layout, and gradient-clipping reduction
// order, so training is reproducible run to run.
template <class T>
struct ParamStore {
  std::vector<std::string> order;
  std::unordered_map<std::string, Array<T>> by_name;

  Array<T>& add(const std::string& name, Array<T> init) {
    auto [it, fresh] = by_name.emplace(name, std::move(init));
    if (!fresh) throw ContractError("duplicate parameter: " + name);
    order.push_back(name);
    return it->second;
  }

  bool has(const std::string& name) const { return by_name.count(name) != 0; }

  Array<T>& at(const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  const Array<T>& at(const std::string& name) const {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (auto& name : order) n += by_name.at(name).size();
    return n;
  }

  template <class F>
  void for_each(F&& f) {
    for (auto& name : order) f(name, by_name.at(name));
  }
  template <class F>
  void for_each(F&& f) const {
    for (auto& name : order) f(name, by_name.at(name));
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (auto& name : order) out.add(name, by_name.at(name).template cast<U>());
    return out;
  }

  // Deep copy under a name prefix (teacher snapshots, checkpoint views).
  ParamStore with_prefix(const std::string& prefix) const {
    ParamStore out;
    for (auto& name : order) out.add(prefix + name, by_name.at(name));
    return out;
  }
};

// Gradient accumulator mirroring a ParamStore's names and shapes.
template <class T>
struct GradStore {
  std::vector<std::string> order;
  std::unordered_map<std::string, Array<T>> by_name;

  GradStore() = default;
  explicit GradStore(const ParamStore<T>& ps) {
    for (auto& name : ps.order) {
      Array<T> z;
      z.dims = ps.by_name.at(name).dims;
      z.v.assign(ps.by_name.at(name).size(), T(0));
      by_name.emplace(name, std::move(z));
      order.push_back(name);
    }
  }

  bool has(const std::string& name) const { return by_name.count(name) != 0; }

  Array<T>& at(const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ContractError("unknown gradient: " + name);
    return it->second;
  }

  void accumulate(const std::string& name, const Array<T>& g) {
    Array<T>& dst = at(name);
    if (!dst.same_shape(g)) throw ContractError("gradient shape mismatch: " + name);
    for (size_t i = 0; i < g.size(); ++i) dst.v[i] += g.v[i];
  }

  void zero() {
    for (auto& name : order) by_name.at(name).fill(T(0));
  }

  void scale_all(T s) {
    for (auto& name : order)
      for (auto& x : by_name.at(name).v) x *= s;
  }

  double global_norm() const {
    double ss = 0;
    for (auto& name : order)
      for (auto x : by_name.at(name).v) ss += double(x) * double(x);
    return std::sqrt(ss);
  }
};

}  // namespace mnsp
