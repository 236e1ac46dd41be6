// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and corpus plumbing.
//
// A run is described by one JSON document covering the encoder profile, the
// scale ladder, pretraining, recognition fine-tuning, and data paths. Unknown
// keys are rejected with their full dotted path; omitted keys take defaults;
// the merged document is embedded in checkpoints, reports, and corpus
// manifests so every artifact is self-describing. Command lines override
// individual keys with dotted assignments ("flags.mla=false").

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mnsp/engine.hpp"
#include "mnsp/recognizer.hpp"
#include "mnsp/synth.hpp"

namespace mnsp {

inline constexpr const char* kConfigFormat = "mnsp-config-v1";
inline constexpr const char* kCorpusFormat = "mnsp-corpus-v1";

// Loop parameters for recognition fine-tuning (the per-step learning rate
// peak lives in recognizer.lr; these only shape the schedule and batching).
struct FinetunePlan {
  size_t steps = 1000;
  size_t batch_size = 32;
  size_t warmup_steps = 100;
  size_t checkpoint_every = 0;  // extra checkpoints every N steps; 0 = final only

  void validate() const {
    if (steps == 0) throw ConfigError("finetune: steps must be positive");
    if (batch_size == 0) throw ConfigError("finetune: batch_size must be positive");
    if (warmup_steps >= steps)
      throw ConfigError("finetune: steps must exceed warmup_steps");
  }
};

struct RunConfig {
  nlohmann::json doc;  // the complete document, defaults merged in
  uint64_t seed = 0;
  std::string precision = "f64";  // "f32" | "f64"
  std::string data_dir;           // corpus directory (provenance)
  engine::PretrainConfig pretrain;
  recognizer::RecognizerConfig rec;
  FinetunePlan finetune;

  // The full default document; doubles as the schema for key validation.
  static nlohmann::json defaults();

  // Validates `user` against the schema (unknown key / wrong type ->
  // ConfigError naming the dotted key), merges it over the defaults, and
  // decodes the result. Accepts partial documents. The second form applies
  // dotted-key overrides after the merge.
  static RunConfig from_json(const nlohmann::json& user);
  static RunConfig from_json(const nlohmann::json& user,
                             const std::vector<std::string>& overrides);

  // from_json over a config file plus dotted-key overrides ("a.b.c=value",
  // applied in order after the file). An empty `file` means defaults only.
  // When neither the file nor an override sets "seed", the MNSP_SEED
  // environment variable (if set and `use_env_seed`) supplies it.
  static RunConfig load(const std::filesystem::path& file,
                        const std::vector<std::string>& overrides = {},
                        bool use_env_seed = true);

  const nlohmann::json& to_json() const { return doc; }

  // The document without filesystem paths — the part that must match when a
  // run is resumed from a checkpoint written by an earlier invocation.
  nlohmann::json semantic() const {
    nlohmann::json j = doc;
    j.erase("data");
    return j;
  }
};

// ---------------------------------------------------------------------------
// Corpus on disk: img_NNNNN.pgm files plus manifest.jsonl (one JSON object
// per sample: file, label, box, source_h, source_w) plus corpus.json (format
// version, sample count, config snapshot).
// ---------------------------------------------------------------------------

void save_corpus(const std::filesystem::path& dir,
                 const std::vector<TextSample>& samples,
                 const nlohmann::json& config_snapshot);

std::vector<TextSample> load_corpus(const std::filesystem::path& dir);

}  // namespace mnsp
