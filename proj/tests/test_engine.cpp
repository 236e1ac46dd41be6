// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "mnsp/engine.hpp"
#include "mnsp/synth.hpp"

using namespace mnsp;
using namespace mnsp::engine;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("mnsp_engine_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Tiny encoder dims over the full-resolution scale ladder, so every scale
// pair and the top-grid mask are exercised at minimal cost.
PretrainConfig tiny_cfg() {
  PretrainConfig cfg;
  cfg.enc = model::EncoderConfig::tiny();
  cfg.enc.max_grid = GridShape{8, 32};
  cfg.batch_size = 8;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.seed = 5;
  return cfg;
}

std::vector<TextSample> make_corpus(size_t n, uint64_t seed) {
  std::vector<TextSample> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Rng lr(derive_seed(seed, i));
    const std::string label = random_label(lr, 1, 8);
    out.push_back(render_synthetic(label, derive_seed(seed, 1000 + i)));
  }
  return out;
}

ParamStore<double> init_online(const PretrainConfig& cfg, uint64_t seed) {
  ParamStore<double> ps;
  Rng rng(derive_seed(seed, kParamStream));
  model::init_encoder(ps, cfg.enc, rng);
  const size_t head = objectives::target_width(cfg.target_mode, cfg.enc);
  model::init_nsp(ps, rng, cfg.enc.embed_dim, head);
  model::init_mim(ps, rng, cfg.enc.embed_dim, head);
  return ps;
}

ParamStore<double> teacher_copy(const ParamStore<double>& online) {
  ParamStore<double> t;
  for (const auto& name : online.order)
    if (name.starts_with("encoder.")) t.add(name, online.at(name));
  return t;
}

struct CsvRow {
  size_t step;
  double lr, nsp, mim, mla, total;
};

std::vector<CsvRow> read_metrics(const fs::path& file, std::string* header = nullptr) {
  std::ifstream f(file);
  REQUIRE(bool(f));
  std::string line;
  REQUIRE(std::getline(f, line));
  if (header != nullptr) *header = line;
  std::vector<CsvRow> rows;
  while (std::getline(f, line)) {
    CsvRow r{};
    REQUIRE(std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &r.step, &r.lr,
                        &r.nsp, &r.mim, &r.mla, &r.total) == 6);
    rows.push_back(r);
  }
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("run plan arithmetic and config validation") {
  PretrainConfig cfg;  // desk defaults: batch 64, epochs 10, warmup 1
  const RunPlan p = plan_run(512, cfg);
  CHECK(p.batch == 64);
  CHECK(p.steps_per_epoch == 8);
  CHECK(p.total_steps == 80);
  CHECK(p.warmup_steps == 8);
  CHECK(p.snapshot_step == 8);

  // Small corpora shrink the effective batch instead of failing.
  const RunPlan q = plan_run(4, cfg);
  CHECK(q.batch == 4);
  CHECK(q.steps_per_epoch == 1);
  CHECK(q.total_steps == 10);

  CHECK_THROWS_AS(plan_run(0, cfg), InputError);

  PretrainConfig bad = tiny_cfg();
  bad.warmup_epochs = bad.epochs;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_cfg();
  bad.mask_ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_cfg();
  bad.enc.max_grid = GridShape{2, 8};  // top scale 8x32 tokens no longer fits
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_cfg();
  bad.scales = ScaleSequence::from_top(32, 128, 2);
  CHECK_THROWS_AS(bad.validate(), ConfigError);  // patch ladder mismatch
  bad = tiny_cfg();
  bad.teacher_mode = TeacherMode::load_checkpoint;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  CHECK(parse_teacher_mode("warmup-snapshot") == TeacherMode::warmup_snapshot);
  CHECK(parse_teacher_mode("frozen-random") == TeacherMode::frozen_random);
  CHECK(parse_teacher_mode("load-checkpoint") == TeacherMode::load_checkpoint);
  CHECK_THROWS_AS(parse_teacher_mode("ema"), ConfigError);
  for (auto m : {TeacherMode::load_checkpoint, TeacherMode::frozen_random,
                 TeacherMode::warmup_snapshot})
    CHECK(parse_teacher_mode(to_string(m)) == m);
}

TEST_CASE("single step: loss structure, frozen teacher, gradient coverage") {
  PretrainConfig cfg = tiny_cfg();
  cfg.flags.augment = false;
  cfg.flags.zoom_in = false;

  const TextSample sample = render_synthetic("abc", 99);
  Rng vr(derive_seed(3, kViewStream));
  const ViewBundle bundle =
      build_views(sample, cfg.scales, cfg.mask_ratio, vr, false, false);

  ParamStore<double> online = init_online(cfg, cfg.seed);
  ParamStore<double> teacher = teacher_copy(online);
  const auto teacher_before = teacher.by_name;

  GradStore<double> grads(online);
  const auto base = pretrain_step(bundle, online, teacher, cfg, grads);

  CHECK(std::isfinite(base.total));
  CHECK(base.nsp > 0.0);
  CHECK(base.mim > 0.0);
  CHECK(base.mla > 0.0);
  CHECK(base.total == (base.nsp + base.mim) + base.mla);

  // Teacher untouched, bit for bit, and completely outside the gradient map.
  for (const auto& name : teacher.order)
    CHECK(teacher.at(name).v == teacher_before.at(name).v);
  for (const auto& name : grads.order) CHECK(!name.starts_with("teacher."));

  // Every branch feeds gradients: encoder, both decoders, the mask token.
  CHECK(grads.at("encoder.patch.w").v != std::vector<double>(grads.at("encoder.patch.w").size(), 0.0));
  CHECK(grads.at("nsp.head.w").v != std::vector<double>(grads.at("nsp.head.w").size(), 0.0));
  CHECK(grads.at("mim.head.w").v != std::vector<double>(grads.at("mim.head.w").size(), 0.0));
  CHECK(grads.at("mim.mask_token").v != std::vector<double>(grads.at("mim.mask_token").size(), 0.0));

  SUBCASE("alignment off: component forced to zero, total is the plain sum") {
    PretrainConfig no_mla = cfg;
    no_mla.flags.mla = false;
    GradStore<double> g2(online);
    const auto off = pretrain_step(bundle, online, teacher, no_mla, g2);
    CHECK(off.mla == 0.0);
    CHECK(off.total == off.nsp + off.mim);
    CHECK(off.nsp == base.nsp);  // same graph prefix, same values
    CHECK(off.mim == base.mim);
  }

  SUBCASE("guidance off: next-scale and alignment branches are unchanged") {
    PretrainConfig no_guide = cfg;
    no_guide.flags.guidance = false;
    GradStore<double> g2(online);
    const auto off = pretrain_step(bundle, online, teacher, no_guide, g2);
    CHECK(off.nsp == base.nsp);
    CHECK(off.mla == base.mla);
    CHECK(off.mim != base.mim);
  }

  SUBCASE("pixel targets swap the regression width, not the structure") {
    PretrainConfig pix = cfg;
    pix.target_mode = objectives::TargetMode::pixel;
    ParamStore<double> online_p = init_online(pix, pix.seed);
    ParamStore<double> teacher_p = teacher_copy(online_p);
    GradStore<double> g2(online_p);
    const auto r = pretrain_step(bundle, online_p, teacher_p, pix, g2);
    CHECK(std::isfinite(r.total));
    CHECK(r.total == (r.nsp + r.mim) + r.mla);
  }
}

// A middle scale pair: its upsampling has no duplicated rows or columns, so
// the decoders can separate every target token. (The smallest pair upsamples
// a one-row grid, whose duplicated rows leave an irreducible residual; that
// residual is exactly the upsampling mismatch the next-scale branch absorbs.)
TEST_CASE("fixed bundle overfit: total loss collapses within 500 steps") {
  PretrainConfig cfg = tiny_cfg();
  const TextSample sample = render_synthetic("on", 41);
  Rng vr(derive_seed(2, kViewStream));
  const ViewBundle bundle =
      build_views(sample, cfg.scales, cfg.mask_ratio, vr, false, false);
  REQUIRE(bundle.pair_index == 2);

  ParamStore<double> online = init_online(cfg, 17);
  ParamStore<double> teacher = teacher_copy(online);
  AdamW<double> opt(online, cfg.opt);

  double initial = -1.0, final_total = -1.0;
  for (size_t step = 0; step < 500; ++step) {
    GradStore<double> grads(online);
    const auto l = pretrain_step(bundle, online, teacher, cfg, grads);
    if (step == 0) initial = l.total;
    final_total = l.total;
    opt.step(grads, 8e-3);
  }
  REQUIRE(initial > 0.0);
  INFO("initial " << initial << " final " << final_total);
  CHECK(final_total < 0.10 * initial);
}

TEST_CASE("training run: metrics, schedule, snapshot, checkpoints") {
  TempDir td;
  PretrainConfig cfg = tiny_cfg();  // 16 samples / batch 8 -> 2 steps per epoch
  cfg.checkpoint_every = 2;
  const auto corpus = make_corpus(16, 7);

  const PretrainResult res = run_pretraining<double>(corpus, cfg, td.path / "run");
  CHECK(res.plan.steps_per_epoch == 2);
  CHECK(res.plan.total_steps == 6);
  CHECK(res.plan.snapshot_step == 2);
  REQUIRE(res.history.size() == 6);

  std::string header;
  const auto rows = read_metrics(td.path / "run" / "metrics.csv", &header);
  CHECK(header == "step,lr,nsp,mim,mla,total");
  REQUIRE(rows.size() == 6);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].step == i + 1);
    CHECK(std::abs(rows[i].total - ((rows[i].nsp + rows[i].mim) + rows[i].mla)) <= 1e-12);
    CHECK(std::abs(rows[i].total - res.history[i].total) <= 1e-15);
    CHECK(rows[i].nsp > 0.0);
    CHECK(rows[i].mim > 0.0);
    CHECK(rows[i].mla > 0.0);
  }
  // Warmup covers steps 1..2 (lr ramps from 0); the peak hits right after.
  CHECK(rows[0].lr == 0.0);
  CHECK(rows[1].lr == doctest::Approx(cfg.base_lr / 2).epsilon(1e-12));
  CHECK(rows[2].lr == doctest::Approx(cfg.base_lr).epsilon(1e-12));
  for (size_t i = 3; i < rows.size(); ++i) CHECK(rows[i].lr < rows[i - 1].lr);

  // Final checkpoint: online + teacher arrays, correct step, loadable.
  REQUIRE(fs::exists(res.final_checkpoint / "manifest.json"));
  auto final_ck = load_checkpoint<double>(res.final_checkpoint);
  CHECK(final_ck.step == 6);
  CHECK(final_ck.has_optim);
  CHECK(final_ck.params.has("encoder.patch.w"));
  CHECK(final_ck.params.has("nsp.head.w"));
  CHECK(final_ck.params.has("mim.mask_token"));
  CHECK(final_ck.params.has("teacher.encoder.patch.w"));
  CHECK(final_ck.config == cfg.to_json());

  // The teacher was frozen at the end-of-warmup snapshot: it must equal the
  // online encoder exactly as checkpointed at step 2, in every array.
  REQUIRE(fs::exists(td.path / "run" / "checkpoint-step-2"));
  REQUIRE(fs::exists(td.path / "run" / "checkpoint-step-4"));
  auto step2 = load_checkpoint<double>(td.path / "run" / "checkpoint-step-2");
  for (const auto& name : step2.params.order) {
    if (!name.starts_with("encoder.")) continue;
    CHECK(final_ck.params.at("teacher." + name).v == step2.params.at(name).v);
    CHECK(step2.params.at("teacher." + name).v == step2.params.at(name).v);
  }
  // ... and training moved on after the snapshot.
  CHECK(final_ck.params.at("encoder.patch.w").v !=
        final_ck.params.at("teacher.encoder.patch.w").v);
}

TEST_CASE("determinism: identical runs produce byte-identical outputs") {
  TempDir td;
  PretrainConfig cfg = tiny_cfg();
  const auto corpus = make_corpus(16, 7);
  run_pretraining<double>(corpus, cfg, td.path / "a");
  run_pretraining<double>(corpus, cfg, td.path / "b");
  CHECK(slurp(td.path / "a" / "metrics.csv") == slurp(td.path / "b" / "metrics.csv"));
  CHECK(slurp(td.path / "a" / "checkpoint-final" / "params.bin") ==
        slurp(td.path / "b" / "checkpoint-final" / "params.bin"));
  CHECK(slurp(td.path / "a" / "checkpoint-final" / "optim.bin") ==
        slurp(td.path / "b" / "checkpoint-final" / "optim.bin"));
}

TEST_CASE("resume from a mid-run checkpoint continues the exact trajectory") {
  TempDir td;
  PretrainConfig cfg = tiny_cfg();
  cfg.checkpoint_every = 3;
  const auto corpus = make_corpus(16, 9);

  run_pretraining<double>(corpus, cfg, td.path / "full");
  const auto full = read_metrics(td.path / "full" / "metrics.csv");
  REQUIRE(full.size() == 6);

  const PretrainResult cont = run_pretraining<double>(
      corpus, cfg, td.path / "cont", td.path / "full" / "checkpoint-step-3");
  const auto tail = read_metrics(td.path / "cont" / "metrics.csv");
  REQUIRE(tail.size() == 3);
  for (size_t i = 0; i < tail.size(); ++i) {
    CHECK(tail[i].step == 4 + i);
    CHECK(std::abs(tail[i].nsp - full[3 + i].nsp) <= 1e-6);
    CHECK(std::abs(tail[i].mim - full[3 + i].mim) <= 1e-6);
    CHECK(std::abs(tail[i].mla - full[3 + i].mla) <= 1e-6);
    CHECK(std::abs(tail[i].total - full[3 + i].total) <= 1e-6);
  }

  // Final parameters agree bit for bit with the unbroken run.
  CHECK(slurp(td.path / "full" / "checkpoint-final" / "params.bin") ==
        slurp(cont.final_checkpoint / "params.bin"));

  // Resuming from the end, or with a different config, is refused.
  CHECK_THROWS_AS(run_pretraining<double>(corpus, cfg, td.path / "x",
                                          td.path / "full" / "checkpoint-final"),
                  ConfigError);
  PretrainConfig other = cfg;
  other.seed = 6;
  CHECK_THROWS_AS(run_pretraining<double>(corpus, other, td.path / "y",
                                          td.path / "full" / "checkpoint-step-3"),
                  ConfigError);
}

TEST_CASE("non-finite loss saves an emergency checkpoint and halts") {
  TempDir td;
  PretrainConfig cfg = tiny_cfg();
  cfg.flags.augment = false;
  cfg.flags.zoom_in = false;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;

  TextSample poisoned;
  poisoned.image = Image(32, 128, 1, 0.5);
  poisoned.image.px[0] = std::numeric_limits<double>::quiet_NaN();
  poisoned.label = "ab";
  poisoned.text_box = Box{0, 0, 32, 128};
  poisoned.source_h = 32;
  poisoned.source_w = 128;

  CHECK_THROWS_AS(run_pretraining<double>({poisoned}, cfg, td.path / "run"),
                  NumericError);
  REQUIRE(fs::exists(td.path / "run" / "checkpoint-emergency" / "manifest.json"));
  auto em = load_checkpoint<double>(td.path / "run" / "checkpoint-emergency");
  CHECK(em.step == 0);  // nothing completed; saved state is the initialization
  for (const auto& name : em.params.order)
    for (double x : em.params.at(name).v) REQUIRE(std::isfinite(x));

  const auto rows = read_metrics(td.path / "run" / "metrics.csv");
  CHECK(rows.empty());
}

TEST_CASE("alternative teacher modes: frozen random and checkpoint-loaded") {
  TempDir td;
  const auto corpus = make_corpus(8, 13);

  PretrainConfig cfg = tiny_cfg();
  cfg.batch_size = 8;  // 1 step per epoch
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.checkpoint_every = 1;
  cfg.teacher_mode = TeacherMode::frozen_random;

  run_pretraining<double>(corpus, cfg, td.path / "fr");
  auto fr1 = load_checkpoint<double>(td.path / "fr" / "checkpoint-step-1");
  auto fr2 = load_checkpoint<double>(td.path / "fr" / "checkpoint-final");
  // The random teacher never moves and never equals the online encoder.
  CHECK(fr1.params.at("teacher.encoder.patch.w").v ==
        fr2.params.at("teacher.encoder.patch.w").v);
  CHECK(fr2.params.at("teacher.encoder.patch.w").v !=
        fr2.params.at("encoder.patch.w").v);

  PretrainConfig lc = cfg;
  lc.teacher_mode = TeacherMode::load_checkpoint;
  lc.teacher_checkpoint = (td.path / "fr" / "checkpoint-final").string();
  run_pretraining<double>(corpus, lc, td.path / "lc");
  auto lck = load_checkpoint<double>(td.path / "lc" / "checkpoint-final");
  // The loaded teacher is the donor checkpoint's *online* encoder.
  CHECK(lck.params.at("teacher.encoder.patch.w").v ==
        fr2.params.at("encoder.patch.w").v);
}

TEST_CASE("corpus overfit: loss at step 200 falls under a quarter of step 10") {
  TempDir td;
  PretrainConfig cfg = tiny_cfg();
  cfg.flags.augment = false;
  cfg.flags.zoom_in = false;
  cfg.batch_size = 8;
  cfg.epochs = 25;  // 64 samples / batch 8 -> 8 steps per epoch -> 200 steps
  cfg.warmup_epochs = 1;
  cfg.base_lr = 5e-3;
  cfg.seed = 77;
  const auto corpus = make_corpus(64, 21);

  const PretrainResult res = run_pretraining<double>(corpus, cfg, td.path / "run");
  REQUIRE(res.plan.total_steps == 200);
  REQUIRE(res.history.size() == 200);
  const double at10 = res.history[9].total;
  const double at200 = res.history[199].total;
  INFO("step 10 " << at10 << " step 200 " << at200);
  CHECK(at200 < 0.25 * at10);
}
