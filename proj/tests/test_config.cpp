// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "mnsp/config.hpp"
#include "mnsp/image.hpp"

using namespace mnsp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("mnsp_cfg_" + std::to_string(getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("empty document decodes to the defaults") {
  const RunConfig c = RunConfig::from_json(json::object());
  CHECK(c.seed == 0);
  CHECK(c.precision == "f64");
  CHECK(c.data_dir == "");
  CHECK(c.pretrain.enc.embed_dim == 384);
  CHECK(c.pretrain.enc.depth == 12);
  CHECK(c.pretrain.enc.heads == 6);
  CHECK(c.pretrain.enc.patch == 4);
  CHECK(c.pretrain.enc.max_grid.rows == 8);
  CHECK(c.pretrain.enc.max_grid.cols == 32);
  CHECK(c.pretrain.scales.top().height == 32);
  CHECK(c.pretrain.scales.top().width == 128);
  CHECK(c.pretrain.scales.s(1).height == 4);
  CHECK(c.pretrain.base_lr == doctest::Approx(3e-4));
  CHECK(c.pretrain.batch_size == 64);
  CHECK(c.pretrain.epochs == 10);
  CHECK(c.pretrain.warmup_epochs == 1);
  CHECK(c.pretrain.mask_ratio == doctest::Approx(0.8));
  CHECK(c.pretrain.target_mode == objectives::TargetMode::feature);
  CHECK(c.pretrain.teacher_mode == engine::TeacherMode::warmup_snapshot);
  CHECK(c.pretrain.flags.mla);
  CHECK(c.pretrain.flags.guidance);
  CHECK(c.pretrain.flags.zoom_in);
  CHECK(c.pretrain.flags.augment);
  CHECK(c.pretrain.opt.weight_decay == doctest::Approx(0.05));
  CHECK(c.pretrain.opt.clip_norm == doctest::Approx(1.0));
  CHECK(c.rec.depth == 6);
  CHECK(c.rec.hidden == 512);
  CHECK(c.rec.heads == 8);
  CHECK(c.rec.max_len == 25);
  CHECK(c.rec.lr == doctest::Approx(1e-4));
  CHECK(c.rec.img_h == 32);
  CHECK(c.rec.img_w == 128);
  CHECK(c.finetune.steps == 1000);
  CHECK(c.finetune.batch_size == 32);
  CHECK(c.finetune.warmup_steps == 100);
  CHECK(c.finetune.checkpoint_every == 0);
  CHECK(c.doc == RunConfig::defaults());
}

TEST_CASE("unknown keys are rejected with their dotted path") {
  CHECK_THROWS_WITH_AS(RunConfig::from_json({{"bogus", 1}}),
                       "unknown config key: bogus", ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::from_json({{"pretrain", {{"lr", 0.1}}}}),
                       "unknown config key: pretrain.lr", ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::from_json({{"flags", {{"mim", true}}}}),
                       "unknown config key: flags.mim", ConfigError);
}

TEST_CASE("wrong value types are rejected with the key named") {
  CHECK_THROWS_WITH_AS(RunConfig::from_json({{"seed", -3}}),
                       "config key seed: expected a non-negative integer",
                       ConfigError);
  CHECK_THROWS_WITH_AS(
      RunConfig::from_json({{"pretrain", {{"epochs", 2.5}}}}),
      "config key pretrain.epochs: expected a non-negative integer",
      ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::from_json({{"flags", {{"mla", 1}}}}),
                       "config key flags.mla: expected true or false",
                       ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::from_json({{"flags", "all"}}),
                       "config key flags: expected an object", ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"precision", "f16"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::array({1, 2})), ConfigError);
}

TEST_CASE("partial documents merge over the defaults") {
  const json user = {{"seed", 42},
                     {"pretrain", {{"epochs", 3}}},
                     {"encoder", {{"embed_dim", 32}, {"heads", 4}}}};
  const RunConfig c = RunConfig::from_json(user);
  CHECK(c.seed == 42);
  CHECK(c.pretrain.seed == 42);
  CHECK(c.pretrain.epochs == 3);
  CHECK(c.pretrain.warmup_epochs == 1);
  CHECK(c.pretrain.enc.embed_dim == 32);
  CHECK(c.pretrain.enc.heads == 4);
  CHECK(c.pretrain.enc.depth == 12);
  CHECK(c.rec.enc.embed_dim == 32);
  CHECK(c.doc["seed"] == 42);

  // The merged document is a fixed point: decoding it again changes nothing.
  const RunConfig c2 = RunConfig::from_json(c.doc);
  CHECK(c2.doc == c.doc);
}

TEST_CASE("inconsistent documents fail struct validation") {
  // 16x64 top scale halves down to 2x8, which patch 4 cannot tile.
  CHECK_THROWS_AS(
      RunConfig::from_json({{"scales", {{"top_height", 16}, {"top_width", 64}}}}),
      ConfigError);
  // Recognition input grid larger than the positional-embedding table.
  CHECK_THROWS_AS(
      RunConfig::from_json({{"recognizer", {{"img_h", 64}, {"img_w", 256}}}}),
      ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"finetune", {{"steps", 0}}}}),
                  ConfigError);
  CHECK_THROWS_AS(
      RunConfig::from_json(
          {{"finetune", {{"steps", 10}, {"warmup_steps", 10}}}}),
      ConfigError);
}

TEST_CASE("dotted overrides rewrite individual keys") {
  RunConfig c = RunConfig::load("", {"flags.mla=false", "pretrain.base_lr=0.001",
                                     "seed=7", "data.dir=/tmp/x=y"});
  CHECK_FALSE(c.pretrain.flags.mla);
  CHECK(c.pretrain.flags.guidance);
  CHECK(c.pretrain.base_lr == doctest::Approx(1e-3));
  CHECK(c.seed == 7);
  CHECK(c.pretrain.seed == 7);
  CHECK(c.data_dir == "/tmp/x=y");  // string values keep raw text past '='

  // A coherent small profile touching arrays and cross-struct consistency.
  const RunConfig tiny = RunConfig::load(
      "", {"encoder.patch=2", "encoder.max_grid=[8,32]", "scales.top_height=16",
           "scales.top_width=64", "recognizer.img_h=16", "recognizer.img_w=64"});
  CHECK(tiny.pretrain.enc.patch == 2);
  CHECK(tiny.pretrain.scales.top().height == 16);
  CHECK(tiny.pretrain.scales.s(1).height == 2);
  CHECK(tiny.rec.grid().rows == 8);
  CHECK(tiny.rec.grid().cols == 32);
}

TEST_CASE("malformed overrides are rejected") {
  CHECK_THROWS_WITH_AS(RunConfig::load("", {"flags.mla"}),
                       "override must look like key=value: flags.mla",
                       ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::load("", {"nope.x=1"}),
                       "unknown config key: nope.x", ConfigError);
  CHECK_THROWS_WITH_AS(
      RunConfig::load("", {"flags=false"}),
      "config key flags: cannot assign to a group; pick one of its fields",
      ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::load("", {"flags.mla=maybe"}),
                       "config key flags.mla: cannot parse value 'maybe'",
                       ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::load("", {"pretrain.epochs=-1"}),
                       "config key pretrain.epochs: expected a non-negative integer",
                       ConfigError);
}

TEST_CASE("config files load, with overrides applied on top") {
  TempDir tmp;
  const fs::path file = tmp.path / "run.json";
  {
    std::ofstream f(file);
    f << R"({"seed": 9, "flags": {"augment": false}})";
  }
  const RunConfig c = RunConfig::load(file);
  CHECK(c.seed == 9);
  CHECK_FALSE(c.pretrain.flags.augment);

  const RunConfig over = RunConfig::load(file, {"seed=11"});
  CHECK(over.seed == 11);

  CHECK_THROWS_AS(RunConfig::load(tmp.path / "absent.json"), ConfigError);

  const fs::path bad = tmp.path / "bad.json";
  {
    std::ofstream f(bad);
    f << "{ not json";
  }
  CHECK_THROWS_AS(RunConfig::load(bad), ConfigError);
}

TEST_CASE("MNSP_SEED fills in only when nothing else sets the seed") {
  TempDir tmp;
  setenv("MNSP_SEED", "123", 1);
  CHECK(RunConfig::load("").seed == 123);
  CHECK(RunConfig::load("", {"seed=5"}).seed == 5);
  CHECK(RunConfig::load("", {}, /*use_env_seed=*/false).seed == 0);

  const fs::path file = tmp.path / "seeded.json";
  {
    std::ofstream f(file);
    f << R"({"seed": 9})";
  }
  CHECK(RunConfig::load(file).seed == 9);

  setenv("MNSP_SEED", "12x", 1);
  CHECK_THROWS_AS(RunConfig::load(""), ConfigError);
  unsetenv("MNSP_SEED");
  CHECK(RunConfig::load("").seed == 0);
}

TEST_CASE("semantic comparison ignores data paths") {
  const RunConfig a = RunConfig::load("", {"data.dir=/a", "seed=3"});
  const RunConfig b = RunConfig::load("", {"data.dir=/b", "seed=3"});
  const RunConfig c = RunConfig::load("", {"data.dir=/a", "seed=4"});
  CHECK(a.semantic() == b.semantic());
  CHECK(a.semantic() != c.semantic());
  CHECK(a.to_json() != b.to_json());
}

TEST_CASE("corpus round-trips through disk") {
  TempDir tmp;
  const fs::path dir = tmp.path / "corpus";
  std::vector<TextSample> samples;
  samples.push_back(render_synthetic("ab", 1));
  samples.push_back(render_synthetic("7", 2));
  samples.push_back(render_synthetic("xyz", 3));

  save_corpus(dir, samples, json{{"seed", 1}});

  const std::string manifest = slurp(dir / "manifest.jsonl");
  CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 3);
  const json meta = json::parse(slurp(dir / "corpus.json"));
  CHECK(meta.at("format") == "mnsp-corpus-v1");
  CHECK(meta.at("count") == 3);
  CHECK(meta.at("config").at("seed") == 1);

  const std::vector<TextSample> back = load_corpus(dir);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].label == samples[i].label);
    CHECK(back[i].source_h == samples[i].source_h);
    CHECK(back[i].source_w == samples[i].source_w);
    CHECK(back[i].text_box.top == samples[i].text_box.top);
    CHECK(back[i].text_box.right == samples[i].text_box.right);
    REQUIRE(back[i].image.h == samples[i].image.h);
    REQUIRE(back[i].image.w == samples[i].image.w);
    double max_err = 0.0;
    for (size_t k = 0; k < samples[i].image.px.size(); ++k)
      max_err = std::max(max_err,
                         std::abs(back[i].image.px[k] - samples[i].image.px[k]));
    CHECK(max_err <= 0.5 / 255.0 + 1e-9);  // 8-bit quantization only
  }

  // Byte-identical on re-save.
  const fs::path dir2 = tmp.path / "corpus2";
  save_corpus(dir2, samples, json{{"seed", 1}});
  CHECK(slurp(dir2 / "manifest.jsonl") == manifest);
  CHECK(slurp(dir2 / "img_00000.pgm") == slurp(dir / "img_00000.pgm"));
}

TEST_CASE("corpus loading errors are diagnosed") {
  TempDir tmp;
  CHECK_THROWS_AS(load_corpus(tmp.path / "missing"), InputError);

  const fs::path dir = tmp.path / "broken";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "manifest.jsonl");
    f << "{ not json\n";
  }
  try {
    load_corpus(dir);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
}
