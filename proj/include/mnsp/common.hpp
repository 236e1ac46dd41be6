// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mnsp {

inline constexpr const char* kFormatVersion = "mnsp-1";

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// config/usage -> 1, input/data -> 2, numerical failure -> 3.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct InputError : std::runtime_error {
  explicit InputError(const std::string& m) : std::runtime_error(m) {}
};
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& m) : std::logic_error(m) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

// splitmix64, used for deriving per-sample seeds from (global seed, index).
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t hash_seed(uint64_t seed, uint64_t a) { return mix64(seed ^ mix64(a)); }
inline uint64_t hash_seed(uint64_t seed, uint64_t a, uint64_t b) {
  return mix64(hash_seed(seed, a) ^ mix64(b + 0x632be59bd9b4e019ull));
}

// Deterministic RNG wrapper. std::mt19937_64 has a standard-fixed sequence,
// but the <random> distributions do not, so the draw helpers live here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : s_(seed ? seed : 0x106689d45497fdb5ull) {}

  uint64_t next_u64() {
    // xorshift* keeps the state tiny; sequence is fixed by this code alone.
    uint64_t x = s_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    s_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free modulo is fine at our scales.
  uint64_t uniform_int(uint64_t n) { return n ? next_u64() % n : 0; }

  // Standard normal via Box-Muller; caches the second value.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t s_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ceil(ratio * n) with a guard against FP round-up of exact products
// (e.g. 0.8 * 10 evaluates to 8.000000000000002).
inline size_t ceil_fraction(double ratio, size_t n) {
  double x = ratio * double(n);
  double r = std::ceil(x - 1e-9);
  return r < 0 ? 0 : size_t(r);
}

}  // namespace mnsp
