// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <vector>

#include "doctest.h"
#include "mnsp/scales.hpp"

using namespace mnsp;

TEST_CASE("default scale ladder: values, grids, token counts") {
  ScaleSequence seq = ScaleSequence::default_sequence();
  REQUIRE(seq.scales.size() == 4);
  CHECK(seq.s(1) == ScaleSpec{4, 16, 4});
  CHECK(seq.s(2) == ScaleSpec{8, 32, 4});
  CHECK(seq.s(3) == ScaleSpec{16, 64, 4});
  CHECK(seq.s(4) == ScaleSpec{32, 128, 4});
  const size_t want[] = {4, 16, 64, 256};
  for (size_t k = 1; k <= 4; ++k) CHECK(seq.s(k).token_count() == want[k - 1]);
  // 4x token law between every adjacent pair
  for (size_t k = 1; k <= 3; ++k)
    CHECK(seq.s(k + 1).token_count() == 4 * seq.s(k).token_count());
  CHECK(seq.s(4).grid() == GridShape{8, 32});
}

TEST_CASE("scale validation rejects bad ladders") {
  CHECK_THROWS_AS(ScaleSpec({10, 16, 4}).validate(), ConfigError);  // 10 % 4 != 0
  ScaleSequence seq = ScaleSequence::default_sequence();
  seq.scales[2].width = 60;
  CHECK_THROWS_AS(seq.validate(), ConfigError);
  ScaleSequence five = ScaleSequence::default_sequence();
  five.scales.push_back(ScaleSpec{64, 256, 4});
  CHECK_THROWS_AS(five.validate(), ConfigError);
}

TEST_CASE("sample_scale_pair: uniform over the 3 adjacent pairs") {
  ScaleSequence seq = ScaleSequence::default_sequence();
  Rng rng(2024);
  size_t counts[4] = {0, 0, 0, 0};
  const size_t draws = 30000;
  for (size_t i = 0; i < draws; ++i) {
    ScalePair p = sample_scale_pair(seq, rng);
    REQUIRE(p.k >= 1);
    REQUIRE(p.k <= 3);
    counts[p.k]++;
    CHECK(p.large.height == 2 * p.small.height);
    CHECK(p.large.width == 2 * p.small.width);
  }
  for (size_t k = 1; k <= 3; ++k) {
    double f = double(counts[k]) / double(draws);
    CHECK(f > 1.0 / 3.0 - 0.02);
    CHECK(f < 1.0 / 3.0 + 0.02);
  }
}

TEST_CASE("sample_scale_pair is reproducible under a fixed seed") {
  ScaleSequence seq = ScaleSequence::default_sequence();
  std::vector<size_t> a, b;
  {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) a.push_back(sample_scale_pair(seq, rng).k);
  }
  {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) b.push_back(sample_scale_pair(seq, rng).k);
  }
  CHECK(a == b);
}

TEST_CASE("random_mask: exact cardinality on every draw") {
  Rng rng(99);
  for (int i = 0; i < 10000; ++i) {
    MaskPattern p = random_mask(256, 0.8, rng);
    REQUIRE(p.masked_count() == 205);  // ceil(0.8 * 256) = ceil(204.8)
  }
  Rng rng2(1);
  CHECK(random_mask(10, 0.8, rng2).masked_count() == 8);
  CHECK(random_mask(1, 0.5, rng2).masked_count() == 1);
  CHECK(random_mask(4, 0.8, rng2).masked_count() == 4);  // ceil(3.2)
}

TEST_CASE("random_mask: per-position frequency matches the ratio") {
  Rng rng(5);
  const size_t n = 256, draws = 10000;
  std::vector<size_t> hits(n, 0);
  for (size_t d = 0; d < draws; ++d) {
    MaskPattern p = random_mask(n, 0.8, rng);
    for (size_t i = 0; i < n; ++i) hits[i] += (p.flags[i] != 0);
  }
  for (size_t i = 0; i < n; ++i) {
    double f = double(hits[i]) / double(draws);
    CHECK(f > 0.78);
    CHECK(f < 0.82);
  }
}

TEST_CASE("random_mask: index helpers partition the grid") {
  Rng rng(3);
  MaskPattern p = random_mask(64, 0.8, rng);
  auto mi = p.masked_indices();
  auto vi = p.visible_indices();
  CHECK(mi.size() == 52);  // ceil(51.2)
  CHECK(vi.size() == 12);
  std::vector<char> seen(64, 0);
  for (size_t i : mi) seen[i] ^= 1;
  for (size_t i : vi) seen[i] ^= 1;
  for (char c : seen) CHECK(c == 1);
}

TEST_CASE("random_mask rejects degenerate ratios") {
  Rng rng(1);
  CHECK_THROWS_AS(random_mask(16, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(random_mask(16, 1.0, rng), ConfigError);
  CHECK_THROWS_AS(random_mask(16, -0.5, rng), ConfigError);
}
