// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "mnsp/gradcheck.hpp"
#include "mnsp/graph.hpp"
#include "mnsp/model.hpp"
#include "mnsp/objectives.hpp"
#include "mnsp/scales.hpp"

using namespace mnsp;
using namespace mnsp::model;
using namespace mnsp::objectives;
using G = Graph<double>;

namespace {

Array<double> randn(Rng& rng, size_t r, size_t c, double s = 1.0) {
  Array<double> a({r, c});
  for (auto& x : a.v) x = s * rng.normal();
  return a;
}

// independent elementwise oracle with its own accumulation
double nsp_oracle(const Array<double>& p, const Array<double>& t) {
  double acc = 0.0;
  for (size_t r = 0; r < p.rows(); ++r) {
    double row = 0.0;
    for (size_t j = 0; j < p.cols(); ++j) {
      const double d = p.at(r, j) - t.at(r, j);
      row += d * d;
    }
    acc += row;
  }
  return acc / double(p.rows());
}

double eval_nsp(const Array<double>& p, const Array<double>& t) {
  G g;
  return g.val(nsp_loss(g, g.input(p), g.input(t)))[0];
}

double eval_mim(const Array<double>& p, const Array<double>& t, const MaskPattern& m) {
  G g;
  return g.val(mim_loss(g, g.input(p), g.input(t), m))[0];
}

double eval_mla(const Array<double>& a, const Array<double>& b, const Array<double>& c) {
  G g;
  return g.val(mla_loss(g, g.input(a), g.input(b), g.input(c)))[0];
}

MaskPattern make_mask(std::vector<char> flags) {
  MaskPattern m;
  m.flags = std::move(flags);
  m.ratio = 0.0;
  return m;
}

}  // namespace

TEST_CASE("nsp_loss: closed forms, oracle, shape errors") {
  Rng rng(5);
  Array<double> t = randn(rng, 4, 2);
  Array<double> p = t;
  CHECK(eval_nsp(p, t) == 0.0);

  for (auto& x : p.v) x += 0.5;  // (4*2*0.25)/4 = 0.5
  CHECK(eval_nsp(p, t) == doctest::Approx(0.5).epsilon(1e-12));

  Array<double> pr = randn(rng, 4, 3);
  Array<double> tr = randn(rng, 4, 3);
  CHECK(std::abs(eval_nsp(pr, tr) - nsp_oracle(pr, tr)) < 1e-7);

  Array<double> bad = randn(rng, 3, 3);
  G g;
  CHECK_THROWS_AS(nsp_loss(g, g.input(pr), g.input(bad)), ContractError);
  CHECK(eval_nsp(pr, tr) >= 0.0);
}

TEST_CASE("mim_loss: gating, closed form, empty-mask error") {
  Array<double> p({2, 1});
  p[0] = 3.0;
  p[1] = 9.0;
  Array<double> t({2, 1});
  t[0] = 1.0;
  t[1] = 0.0;
  MaskPattern m = make_mask({1, 0});
  CHECK(eval_mim(p, t, m) == doctest::Approx(4.0).epsilon(1e-12));

  // prediction equals target on masked rows, arbitrary elsewhere -> 0
  Rng rng(6);
  Array<double> t2 = randn(rng, 8, 3);
  Array<double> p2 = randn(rng, 8, 3);
  MaskPattern m2 = make_mask({1, 0, 1, 0, 0, 1, 0, 0});
  for (size_t i : m2.masked_indices())
    for (size_t j = 0; j < 3; ++j) p2.at(i, j) = t2.at(i, j);
  CHECK(eval_mim(p2, t2, m2) == 0.0);

  // perturbing pred at any unmasked index leaves the value bit-identical
  Array<double> p3 = randn(rng, 8, 3);
  const double before = eval_mim(p3, t2, m2);
  for (size_t i = 0; i < 8; ++i) {
    if (m2.flags[i]) continue;
    for (size_t j = 0; j < 3; ++j) p3.at(i, j) += 1000.0 * rng.normal();
  }
  const double after = eval_mim(p3, t2, m2);
  CHECK(before == after);

  MaskPattern none = make_mask({0, 0, 0, 0, 0, 0, 0, 0});
  G g;
  CHECK_THROWS_AS(mim_loss(g, g.input(p3), g.input(t2), none), ContractError);
  MaskPattern wrong = make_mask({1, 0});
  CHECK_THROWS_AS(mim_loss(g, g.input(p3), g.input(t2), wrong), ContractError);
}

TEST_CASE("mla_loss: closed form, pivot symmetry, width errors") {
  Array<double> z({1, 2});
  CHECK(eval_mla(z, z, z) == 0.0);

  Array<double> cm({1, 2});
  cm[0] = 1.0;
  cm[1] = 0.0;
  CHECK(eval_mla(cm, z, z) == doctest::Approx(2.0).epsilon(1e-12));

  Rng rng(7);
  Array<double> a = randn(rng, 1, 6), b = randn(rng, 1, 6), c = randn(rng, 1, 6);
  CHECK(eval_mla(a, b, c) == eval_mla(a, c, b));  // masked view is the pivot
  CHECK(eval_mla(a, b, c) >= 0.0);

  Array<double> wide = randn(rng, 1, 7);
  G g;
  CHECK_THROWS_AS(mla_loss(g, g.input(a), g.input(wide), g.input(c)), ContractError);
}

TEST_CASE("total_loss: unweighted sum with fixed accumulation order") {
  LossBreakdown<double> zero;
  CHECK(total_loss(zero) == 0.0);

  LossBreakdown<double> parts;
  parts.nsp = 0.5;
  parts.mim = 4.0;
  parts.mla = 2.0;
  CHECK(total_loss(parts) == doctest::Approx(6.5).epsilon(1e-12));
  CHECK(total_loss(parts) == (0.5 + 4.0) + 2.0);

  // graph-level combination agrees with the value-level sum bit for bit
  G g;
  auto v = total_loss(g, g.input(Array<double>::full(1, 1, 0.5)),
                      g.input(Array<double>::full(1, 1, 4.0)),
                      g.input(Array<double>::full(1, 1, 2.0)));
  CHECK(g.val(v)[0] == total_loss(parts));
}

TEST_CASE("losses are invariant under a shared permutation of token order") {
  Rng rng(8);
  const size_t n = 10, d = 4;
  Array<double> p = randn(rng, n, d), t = randn(rng, n, d);
  std::vector<char> fl(n, 0);
  fl[1] = fl[4] = fl[7] = 1;
  MaskPattern m = make_mask(fl);

  std::vector<size_t> perm = {3, 0, 7, 1, 9, 5, 2, 8, 4, 6};
  Array<double> pp({n, d}), tp({n, d});
  std::vector<char> flp(n);
  for (size_t i = 0; i < n; ++i) {
    flp[i] = m.flags[perm[i]];
    for (size_t j = 0; j < d; ++j) {
      pp.at(i, j) = p.at(perm[i], j);
      tp.at(i, j) = t.at(perm[i], j);
    }
  }
  CHECK(eval_nsp(pp, tp) == doctest::Approx(eval_nsp(p, t)).epsilon(1e-12));
  CHECK(eval_mim(pp, tp, make_mask(flp)) ==
        doctest::Approx(eval_mim(p, t, m)).epsilon(1e-12));
}

TEST_CASE("make_target: feature mode is the teacher forward, CLS stripped") {
  EncoderConfig cfg = EncoderConfig::tiny();
  ParamStore<double> teacher;
  Rng rng(9);
  init_encoder(teacher, cfg, rng, "encoder.");
  Rng irng(10);
  Array<double> pix = randn(irng, 4, cfg.patch_len(), 0.4);

  G g;
  auto target = make_target(g, teacher, cfg, pix, GridShape{1, 4}, TargetMode::feature);
  REQUIRE(g.val(target).rows() == 4);  // CLS stripped
  REQUIRE(g.val(target).cols() == cfg.embed_dim);

  // definitional: equals an ordinary (trainable) forward with the same params
  G g2;
  Ctx<double> c2{&g2, &teacher, true};
  auto ref = encode(c2, pix, GridShape{1, 4}, cfg);
  const Array<double>&tv = g.val(target), &rv = g2.val(ref.patches);
  for (size_t i = 0; i < tv.size(); ++i) CHECK(tv[i] == rv[i]);
}

TEST_CASE("make_target: pixel mode standardizes patch rows") {
  EncoderConfig cfg = EncoderConfig::tiny();
  ParamStore<double> unused;
  CHECK(target_width(TargetMode::pixel, cfg) == 16);  // p=4, C=1
  CHECK(target_width(TargetMode::feature, cfg) == cfg.embed_dim);

  Array<double> pix({3, 16});
  for (size_t j = 0; j < 16; ++j) pix.at(0, j) = 0.7;       // constant patch
  for (size_t j = 0; j < 16; ++j) pix.at(1, j) = double(j);  // ramp
  Rng rng(11);
  for (size_t j = 0; j < 16; ++j) pix.at(2, j) = rng.normal();

  G g;
  auto target = make_target(g, unused, cfg, pix, GridShape{1, 3}, TargetMode::pixel);
  const Array<double>& tv = g.val(target);
  REQUIRE(tv.rows() == 3);
  REQUIRE(tv.cols() == 16);
  // constant -> zeros (up to one ulp of the mean, amplified by 1/sqrt(eps))
  for (size_t j = 0; j < 16; ++j) CHECK(std::abs(tv.at(0, j)) <= 1e-9);
  for (size_t r = 1; r < 3; ++r) {
    double mu = 0.0, var = 0.0;
    for (size_t j = 0; j < 16; ++j) mu += tv.at(r, j);
    mu /= 16.0;
    for (size_t j = 0; j < 16; ++j) var += (tv.at(r, j) - mu) * (tv.at(r, j) - mu);
    var /= 16.0;
    CHECK(std::abs(mu) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shifts it slightly
  }
}

TEST_CASE("parse_target_mode round-trips and rejects junk") {
  CHECK(parse_target_mode("feature") == TargetMode::feature);
  CHECK(parse_target_mode("pixel") == TargetMode::pixel);
  CHECK(to_string(TargetMode::pixel) == "pixel");
  CHECK_THROWS_AS(parse_target_mode("latent"), ConfigError);
}

// ---------------------------------------------------------------------------
// The miniature pretraining composition used for gradient validation: three
// encodes (small, large, masked), token upsampling, both decoders, all three
// losses. Targets are constants close to the initial predictions and the
// final-norm gain is scaled down so every loss is small at the test point —
// central differences are then far from their rounding floor.
// ---------------------------------------------------------------------------

namespace {

struct StepFixture {
  EncoderConfig cfg = EncoderConfig::tiny();
  Array<double> pix_small, pix_large, pix_masked;
  MaskPattern mask;
  std::vector<size_t> vis;
  Array<double> t_nsp, t_mim;

  StepFixture() {
    Rng irng(20);
    pix_small = randn(irng, 4, cfg.patch_len(), 0.4);
    pix_large = randn(irng, 16, cfg.patch_len(), 0.4);
    pix_masked = randn(irng, 16, cfg.patch_len(), 0.4);
    Rng mrng(21);
    mask = random_mask(16, 0.8, mrng);
    vis = mask.visible_indices();
  }
};

struct StepVars {
  G::Var nsp, mim, mla, total;
};

StepVars build_step(G& g, ParamStore<double>& ps, const StepFixture& fx) {
  Ctx<double> c{&g, &ps, true};
  const EncoderConfig& cfg = fx.cfg;
  auto es = encode(c, fx.pix_small, GridShape{1, 4}, cfg);
  auto el = encode(c, fx.pix_large, GridShape{2, 8}, cfg);
  auto em = encode(c, fx.pix_masked, GridShape{2, 8}, cfg, &fx.vis);

  auto F = upsample_tokens_bicubic(g, es.patches, GridShape{1, 4}, GridShape{2, 8});
  auto pred_nsp = nsp_decode(c, F, es.patches, cfg.heads, "nsp.", 16);

  auto assembled = g.scatter_assemble(em.patches, c.leaf("mim.mask_token"), fx.vis, 16);
  auto f_mim = g.add(assembled, pos_for_grid(c, cfg, GridShape{2, 8}, "encoder."));
  auto pred_mim = mim_decode(c, f_mim, es.patches, pred_nsp, cfg.heads);

  StepVars out;
  out.nsp = nsp_loss(g, pred_nsp, g.input(fx.t_nsp));
  out.mim = mim_loss(g, pred_mim, g.input(fx.t_mim), fx.mask);
  out.mla = mla_loss(g, em.cls, es.cls, el.cls);
  out.total = total_loss(g, out.nsp, out.mim, out.mla);
  return out;
}

}  // namespace

TEST_CASE("gradients: every loss composed with the tiny model matches FD") {
  StepFixture base;
  ParamStore<double> ps;
  Rng rng(22);
  init_encoder(ps, base.cfg, rng);
  init_nsp(ps, rng, base.cfg.embed_dim, base.cfg.embed_dim);
  init_mim(ps, rng, base.cfg.embed_dim, base.cfg.embed_dim);
  for (auto& x : ps.at("encoder.ln_f.g").v) x *= 0.05;

  // probe pass to place targets near the initial predictions
  base.t_nsp = Array<double>({16, base.cfg.embed_dim});
  base.t_mim = Array<double>({16, base.cfg.embed_dim});
  {
    G g;
    Ctx<double> c{&g, &ps, true};
    auto es = encode(c, base.pix_small, GridShape{1, 4}, base.cfg);
    auto em = encode(c, base.pix_masked, GridShape{2, 8}, base.cfg, &base.vis);
    auto F = upsample_tokens_bicubic(g, es.patches, GridShape{1, 4}, GridShape{2, 8});
    auto pred_nsp = nsp_decode(c, F, es.patches, base.cfg.heads, "nsp.", 16);
    auto assembled =
        g.scatter_assemble(em.patches, c.leaf("mim.mask_token"), base.vis, 16);
    auto f_mim =
        g.add(assembled, pos_for_grid(c, base.cfg, GridShape{2, 8}, "encoder."));
    auto pred_mim = mim_decode(c, f_mim, es.patches, pred_nsp, base.cfg.heads);
    Rng trng(23);
    const Array<double>&pn = g.val(pred_nsp), &pm = g.val(pred_mim);
    for (size_t i = 0; i < base.t_nsp.size(); ++i)
      base.t_nsp[i] = pn[i] + 0.01 * trng.normal();
    for (size_t i = 0; i < base.t_mim.size(); ++i)
      base.t_mim[i] = pm[i] + 0.01 * trng.normal();
  }

  auto fd_for = [&](const std::function<G::Var(G&, StepVars&)>& pick) {
    GradStore<double> gs(ps);
    double value = 0.0;
    {
      G g;
      StepVars sv = build_step(g, ps, base);
      auto loss = pick(g, sv);
      value = g.val(loss)[0];
      g.backward(loss);
      g.export_param_grads(gs);
    }
    CHECK(std::isfinite(value));
    CHECK(value < 1.0);  // small-loss construction holds
    auto loss_fn = [&]() {
      G g;
      StepVars sv = build_step(g, ps, base);
      return g.val(pick(g, sv))[0];
    };
    FdReport rep = fd_check_params(ps, gs, loss_fn, 1e-5);
    CHECK(rep.checked == ps.scalar_count());
    INFO("worst: " << rep.worst_param << "[" << rep.worst_index << "] analytic "
                   << rep.analytic << " numeric " << rep.numeric);
    CHECK(rep.max_rel_err <= 1e-3);
    return gs;
  };

  GradStore<double> g_nsp =
      fd_for([](G&, StepVars& sv) { return sv.nsp; });
  GradStore<double> g_mim =
      fd_for([](G&, StepVars& sv) { return sv.mim; });
  GradStore<double> g_mla =
      fd_for([](G&, StepVars& sv) { return sv.mla; });
  GradStore<double> g_tot =
      fd_for([](G&, StepVars& sv) { return sv.total; });

  // gradient of the total equals the sum of the per-loss gradients
  double worst = 0.0;
  for (auto& name : ps.order) {
    const Array<double>&a = g_nsp.at(name), &b = g_mim.at(name), &c = g_mla.at(name),
          &t = g_tot.at(name);
    for (size_t i = 0; i < t.size(); ++i) {
      const double s = a[i] + b[i] + c[i];
      const double denom = std::max({std::abs(s), std::abs(t[i]), 1e-12});
      worst = std::max(worst, std::abs(s - t[i]) / denom);
    }
  }
  // separate graphs accumulate in a different order; agreement is to
  // rounding, not bit-exact
  CHECK(worst <= 1e-8);

  // the mask token reaches the MIM loss but not NSP or MLA
  double mt_nsp = 0.0, mt_mim = 0.0;
  for (double v : g_nsp.at("mim.mask_token").v) mt_nsp = std::max(mt_nsp, std::abs(v));
  for (double v : g_mim.at("mim.mask_token").v) mt_mim = std::max(mt_mim, std::abs(v));
  CHECK(mt_nsp == 0.0);
  CHECK(mt_mim > 1e-10);
}

TEST_CASE("feature targets carry no gradient into the teacher") {
  EncoderConfig cfg = EncoderConfig::tiny();
  ParamStore<double> ps;
  Rng rng(30);
  init_encoder(ps, cfg, rng, "encoder.");
  init_nsp(ps, rng, cfg.embed_dim, cfg.embed_dim);
  // teacher = separate copy of the encoder under its own prefix
  Rng rng2(30);
  init_encoder(ps, cfg, rng2, "teacher.");

  Rng irng(31);
  Array<double> pix_small = randn(irng, 4, cfg.patch_len(), 0.4);
  Array<double> pix_large = randn(irng, 16, cfg.patch_len(), 0.4);

  GradStore<double> gs(ps);
  G g;
  Ctx<double> c{&g, &ps, true};
  auto es = encode(c, pix_small, GridShape{1, 4}, cfg);
  auto F = upsample_tokens_bicubic(g, es.patches, GridShape{1, 4}, GridShape{2, 8});
  auto pred = nsp_decode(c, F, es.patches, cfg.heads, "nsp.", 16);
  auto target =
      make_target(g, ps, cfg, pix_large, GridShape{2, 8}, TargetMode::feature, "teacher.");
  auto loss = nsp_loss(g, pred, target);
  g.backward(loss);
  g.export_param_grads(gs);

  double teacher_max = 0.0, online_max = 0.0;
  for (auto& name : ps.order) {
    double mx = 0.0;
    for (double v : gs.at(name).v) mx = std::max(mx, std::abs(v));
    if (name.rfind("teacher.", 0) == 0)
      teacher_max = std::max(teacher_max, mx);
    else
      online_max = std::max(online_max, mx);
  }
  CHECK(teacher_max == 0.0);  // structurally detached
  CHECK(online_max > 1e-10);
}
