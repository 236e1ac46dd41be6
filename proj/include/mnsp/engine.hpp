// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mnsp/checkpoint.hpp"
#include "mnsp/model.hpp"
#include "mnsp/objectives.hpp"
#include "mnsp/optimizer.hpp"
#include "mnsp/pipeline.hpp"

namespace mnsp::engine {

// Seed-stream regions. Corpus synthesis owns plain indices, epoch shuffles
// own [2^32, ...); the regions below keep parameter init, the frozen-random
// teacher, and per-view draws from ever colliding with those.
inline constexpr uint64_t kParamStream = uint64_t(1) << 34;
inline constexpr uint64_t kTeacherStream = kParamStream + 1;
inline constexpr uint64_t kViewStream = uint64_t(1) << 35;

enum class TeacherMode { load_checkpoint, frozen_random, warmup_snapshot };

inline TeacherMode parse_teacher_mode(const std::string& s) {
  if (s == "load-checkpoint") return TeacherMode::load_checkpoint;
  if (s == "frozen-random") return TeacherMode::frozen_random;
  if (s == "warmup-snapshot") return TeacherMode::warmup_snapshot;
  throw ConfigError("unknown teacher mode: " + s);
}

inline std::string to_string(TeacherMode m) {
  switch (m) {
    case TeacherMode::load_checkpoint: return "load-checkpoint";
    case TeacherMode::frozen_random: return "frozen-random";
    default: return "warmup-snapshot";
  }
}

struct PretrainFlags {
  bool mla = true;
  bool guidance = true;
  bool zoom_in = true;
  bool augment = true;
};

struct PretrainConfig {
  model::EncoderConfig enc = model::EncoderConfig::desk();
  ScaleSequence scales = ScaleSequence::default_sequence();
  double base_lr = 3e-4;
  size_t batch_size = 64;
  size_t epochs = 10;
  size_t warmup_epochs = 1;
  double mask_ratio = 0.8;
  objectives::TargetMode target_mode = objectives::TargetMode::feature;
  PretrainFlags flags;
  TeacherMode teacher_mode = TeacherMode::warmup_snapshot;
  std::string teacher_checkpoint;  // load-checkpoint mode only
  uint64_t seed = 0;
  size_t checkpoint_every = 0;  // extra checkpoints every N steps; 0 = final only
  AdamWConfig opt;

  void validate() const {
    enc.validate();
    scales.validate();
    if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (epochs <= warmup_epochs)
      throw ConfigError("epochs must exceed warmup_epochs");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
      throw ConfigError("mask_ratio must be in (0,1)");
    if (enc.patch != scales.top().patch)
      throw ConfigError("encoder patch size does not match the scale ladder");
    const GridShape top = scales.top().grid();
    if (top.rows > enc.max_grid.rows || top.cols > enc.max_grid.cols)
      throw ConfigError("top scale exceeds the positional-embedding grid");
    if (teacher_mode == TeacherMode::load_checkpoint && teacher_checkpoint.empty())
      throw ConfigError("teacher mode load-checkpoint needs a checkpoint path");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["base_lr"] = base_lr;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["warmup_epochs"] = warmup_epochs;
    j["mask_ratio"] = mask_ratio;
    j["target_mode"] = objectives::to_string(target_mode);
    j["flags"] = {{"mla", flags.mla},
                  {"guidance", flags.guidance},
                  {"zoom_in", flags.zoom_in},
                  {"augment", flags.augment}};
    j["teacher_mode"] = to_string(teacher_mode);
    j["teacher_checkpoint"] = teacher_checkpoint;
    j["seed"] = seed;
    j["checkpoint_every"] = checkpoint_every;
    j["encoder"] = {{"embed_dim", enc.embed_dim}, {"depth", enc.depth},
                    {"heads", enc.heads},         {"patch", enc.patch},
                    {"channels", enc.channels},
                    {"max_grid", {enc.max_grid.rows, enc.max_grid.cols}}};
    j["scales"] = {{"top_height", scales.top().height},
                   {"top_width", scales.top().width},
                   {"patch", scales.top().patch}};
    j["optimizer"] = {{"beta1", opt.beta1},
                      {"beta2", opt.beta2},
                      {"eps", opt.eps},
                      {"weight_decay", opt.weight_decay},
                      {"clip_norm", opt.clip_norm}};
    return j;
  }
};

// Step bookkeeping for a run: steps are counted 1..total_steps; the teacher
// snapshot (warmup-snapshot mode) happens after `snapshot_step` completes.
struct RunPlan {
  size_t batch = 0;
  size_t steps_per_epoch = 0;
  size_t total_steps = 0;
  size_t warmup_steps = 0;
  size_t snapshot_step = 0;
};

inline RunPlan plan_run(size_t corpus_size, const PretrainConfig& cfg) {
  if (corpus_size == 0) throw InputError("pretraining corpus is empty");
  RunPlan p;
  p.batch = std::min(cfg.batch_size, corpus_size);
  p.steps_per_epoch = corpus_size / p.batch;
  p.total_steps = cfg.epochs * p.steps_per_epoch;
  p.warmup_steps = cfg.warmup_epochs * p.steps_per_epoch;
  p.snapshot_step = p.warmup_steps;
  return p;
}

// ---------------------------------------------------------------------------
// One training step on one view bundle: the full three-branch composition.
// Gradients accumulate into `grads` (the caller averages over the batch);
// teacher parameters enter the graph as constants and receive none.
// ---------------------------------------------------------------------------

template <class T>
objectives::LossBreakdown<double> pretrain_step(const ViewBundle& b,
                                                ParamStore<T>& online,
                                                ParamStore<T>& teacher,
                                                const PretrainConfig& cfg,
                                                GradStore<T>& grads) {
  Graph<T> g;
  model::Ctx<T> c{&g, &online, true};
  const model::EncoderConfig& enc = cfg.enc;

  const Array<T> pix_small = patchify(b.view_small, enc.patch).template cast<T>();
  const Array<T> pix_large = patchify(b.view_large, enc.patch).template cast<T>();
  const Array<T> pix_masked = patchify(b.view_masked, enc.patch).template cast<T>();
  const Array<T> pix_target = patchify(b.target_view, enc.patch).template cast<T>();

  auto es = model::encode(c, pix_small, b.s_small.grid(), enc);
  auto el = model::encode(c, pix_large, b.s_large.grid(), enc);
  const std::vector<size_t> vis = b.mask.visible_indices();
  auto em = model::encode(c, pix_masked, b.s_mask.grid(), enc, &vis);

  // Next-scale branch: upsample small-scale tokens to the large grid,
  // decode against the small-scale context, regress onto the teacher view.
  auto F = model::upsample_tokens_bicubic(g, es.patches, b.s_small.grid(),
                                          b.s_large.grid());
  typename Graph<T>::Var nsp_features;
  auto pred_nsp = model::nsp_decode(c, F, es.patches, enc.heads, "nsp.",
                                    b.s_large.token_count(), &nsp_features);
  auto t_nsp = objectives::make_target(g, teacher, enc, pix_large,
                                       b.s_large.grid(), cfg.target_mode);
  auto l_nsp = objectives::nsp_loss(g, pred_nsp, t_nsp);

  // Masked branch: visible-token encoding, mask-token assembly with the
  // positional table re-added, decoding guided by the other branch.
  auto assembled = g.scatter_assemble(em.patches, c.leaf("mim.mask_token"), vis,
                                      b.s_mask.token_count());
  auto f_mim =
      g.add(assembled, model::pos_for_grid(c, enc, b.s_mask.grid(), "encoder."));
  typename Graph<T>::Var guide_small, guide_nsp;
  if (cfg.flags.guidance) {
    guide_small = es.patches;
    guide_nsp = nsp_features;
  }
  auto pred_mim = model::mim_decode(c, f_mim, guide_small, guide_nsp, enc.heads);
  auto t_mim = objectives::make_target(g, teacher, enc, pix_target,
                                       b.s_mask.grid(), cfg.target_mode);
  auto l_mim = objectives::mim_loss(g, pred_mim, t_mim, b.mask);

  objectives::LossBreakdown<double> out;
  typename Graph<T>::Var total;
  if (cfg.flags.mla) {
    auto l_mla = objectives::mla_loss(g, em.cls, es.cls, el.cls);
    total = objectives::total_loss(g, l_nsp, l_mim, l_mla);
    out.mla = double(g.val(l_mla)[0]);
  } else {
    out.mla = 0.0;
    total = g.add(l_nsp, l_mim);
  }
  out.nsp = double(g.val(l_nsp)[0]);
  out.mim = double(g.val(l_mim)[0]);
  out.total = double(g.val(total)[0]);

  if (!std::isfinite(out.total) || !std::isfinite(out.nsp) ||
      !std::isfinite(out.mim) || !std::isfinite(out.mla)) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "non-finite loss: nsp=%g mim=%g mla=%g total=%g "
                  "(accumulated grad norm %g)",
                  out.nsp, out.mim, out.mla, out.total, grads.global_norm());
    throw NumericError(buf);
  }

  g.backward(total);
  g.export_param_grads(grads);
  return out;
}

// ---------------------------------------------------------------------------
// Full pretraining loop
// ---------------------------------------------------------------------------

struct PretrainResult {
  std::filesystem::path final_checkpoint;
  RunPlan plan;
  std::vector<objectives::LossBreakdown<double>> history;  // one entry per step
};

namespace detail {

template <class T>
ParamStore<T> encoder_subset(const ParamStore<T>& src) {
  ParamStore<T> out;
  for (const auto& name : src.order)
    if (name.starts_with("encoder.")) out.add(name, src.at(name));
  if (out.order.empty()) throw InputError("checkpoint contains no encoder arrays");
  return out;
}

template <class T>
ParamStore<T> combine_with_teacher(const ParamStore<T>& online,
                                   const ParamStore<T>& teacher) {
  ParamStore<T> all;
  for (const auto& name : online.order) all.add(name, online.at(name));
  for (const auto& name : teacher.order) all.add("teacher." + name, teacher.at(name));
  return all;
}

inline void write_metrics_row(std::ofstream& f, size_t step, double lr, double nsp,
                              double mim, double mla, double total) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", step, lr,
                nsp, mim, mla, total);
  f << buf;
  f.flush();
}

}  // namespace detail

template <class T>
PretrainResult run_pretraining(const std::vector<TextSample>& corpus,
                               const PretrainConfig& cfg,
                               const std::filesystem::path& out_dir,
                               const std::filesystem::path& resume_from = {}) {
  cfg.validate();
  const size_t n = corpus.size();
  const RunPlan plan = plan_run(n, cfg);
  const nlohmann::json cfg_json = cfg.to_json();

  ParamStore<T> online, teacher;
  size_t start_step = 0;
  std::optional<LoadedCheckpoint<T>> resumed;

  if (!resume_from.empty()) {
    resumed = load_checkpoint<T>(resume_from);
    if (resumed->config != cfg_json)
      throw ConfigError("resume: checkpoint was written with a different config");
    if (resumed->step >= plan.total_steps)
      throw ConfigError("resume: checkpoint is already at the final step");
    for (const auto& name : resumed->params.order) {
      if (name.starts_with("teacher."))
        teacher.add(name.substr(8), resumed->params.at(name));
      else
        online.add(name, resumed->params.at(name));
    }
    start_step = resumed->step;
  } else {
    Rng prng(derive_seed(cfg.seed, kParamStream));
    model::init_encoder(online, cfg.enc, prng);
    const size_t head_out = objectives::target_width(cfg.target_mode, cfg.enc);
    model::init_nsp(online, prng, cfg.enc.embed_dim, head_out);
    model::init_mim(online, prng, cfg.enc.embed_dim, head_out);

    switch (cfg.teacher_mode) {
      case TeacherMode::warmup_snapshot:
        teacher = detail::encoder_subset(online);
        break;
      case TeacherMode::frozen_random: {
        Rng trng(derive_seed(cfg.seed, kTeacherStream));
        init_encoder(teacher, cfg.enc, trng);
        break;
      }
      case TeacherMode::load_checkpoint: {
        LoadedCheckpoint<T> tlc = load_checkpoint<T>(cfg.teacher_checkpoint);
        teacher = detail::encoder_subset(tlc.params);
        break;
      }
    }
  }

  AdamW<T> opt(online, cfg.opt);
  if (resumed) resumed->restore_optimizer(opt);
  resumed.reset();

  std::filesystem::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.csv", std::ios::trunc);
  if (!metrics) throw InputError("cannot write metrics: " + (out_dir / "metrics.csv").string());
  metrics << "step,lr,nsp,mim,mla,total\n";
  metrics.flush();

  PretrainResult result;
  result.plan = plan;

  GradStore<T> grads(online);
  std::vector<size_t> order;
  size_t order_epoch = size_t(-1);

  auto save_to = [&](const std::filesystem::path& dir, size_t step) {
    save_checkpoint<T>(dir, detail::combine_with_teacher(online, teacher), step,
                       cfg_json, &opt);
  };

  for (size_t s = start_step + 1; s <= plan.total_steps; ++s) {
    const size_t epoch = (s - 1) / plan.steps_per_epoch;
    const size_t slot = (s - 1) % plan.steps_per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(n, cfg.seed, epoch);
      order_epoch = epoch;
    }

    grads.zero();
    double sum_nsp = 0, sum_mim = 0, sum_mla = 0;
    try {
      for (size_t i = 0; i < plan.batch; ++i) {
        const size_t pos = slot * plan.batch + i;
        Rng vrng(derive_seed(cfg.seed, kViewStream + uint64_t(epoch) * n + pos));
        const ViewBundle bundle =
            build_views(corpus[order[pos]], cfg.scales, cfg.mask_ratio, vrng,
                        cfg.flags.augment, cfg.flags.zoom_in);
        const auto losses = pretrain_step(bundle, online, teacher, cfg, grads);
        sum_nsp += losses.nsp;
        sum_mim += losses.mim;
        sum_mla += losses.mla;
      }
    } catch (const NumericError&) {
      save_to(out_dir / "checkpoint-emergency", s - 1);
      throw;
    }

    grads.scale_all(T(1.0 / double(plan.batch)));
    const double nsp = sum_nsp / double(plan.batch);
    const double mim = sum_mim / double(plan.batch);
    const double mla = sum_mla / double(plan.batch);
    const double total = (nsp + mim) + mla;
    const double gnorm = grads.global_norm();
    if (!std::isfinite(total) || !std::isfinite(gnorm)) {
      save_to(out_dir / "checkpoint-emergency", s - 1);
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "non-finite batch at step %zu: total=%g grad_norm=%g", s,
                    total, gnorm);
      throw NumericError(buf);
    }

    const double lr = lr_schedule(s - 1, plan.total_steps, plan.warmup_steps,
                                  cfg.base_lr);
    opt.step(grads, lr);

    if (s == plan.snapshot_step && cfg.teacher_mode == TeacherMode::warmup_snapshot)
      for (const auto& name : teacher.order) teacher.at(name) = online.at(name);

    detail::write_metrics_row(metrics, s, lr, nsp, mim, mla, total);
    result.history.push_back({nsp, mim, mla, total});

    if (cfg.checkpoint_every != 0 && s % cfg.checkpoint_every == 0 &&
        s != plan.total_steps)
      save_to(out_dir / ("checkpoint-step-" + std::to_string(s)), s);
  }

  result.final_checkpoint = out_dir / "checkpoint-final";
  save_to(result.final_checkpoint, plan.total_steps);
  return result;
}

}  // namespace mnsp::engine
