// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mnsp/model.hpp"
#include "mnsp/objectives.hpp"
#include "mnsp/params.hpp"
#include "mnsp/recognizer.hpp"
#include "mnsp/synth.hpp"

namespace mnsp {

// Central-difference gradient comparison, double precision only. `loss_fn`
// must rebuild the forward pass from the current contents of `ps` (graphs are
// single-shot). `analytic` holds gradients already computed by one backward
// pass at the unperturbed point.
struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  size_t checked = 0;
};

inline FdReport fd_check_params(ParamStore<double>& ps, GradStore<double>& analytic,
                                const std::function<double()>& loss_fn,
                                double step = 1e-5) {
  FdReport rep;
  for (auto& name : ps.order) {
    Array<double>& p = ps.at(name);
    Array<double>& g = analytic.at(name);
    for (size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + step;
      const double lp = loss_fn();
      p[i] = keep - step;
      const double lm = loss_fn();
      p[i] = keep;
      const double num = (lp - lm) / (2.0 * step);
      const double ana = g[i];
      const double denom = std::max({std::abs(ana), std::abs(num), 1e-8});
      const double rel = std::abs(ana - num) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = name;
        rep.worst_index = i;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// The gradcheck suite: one finite-difference comparison per graph operation,
// plus the composed pretraining losses and the fine-tuning cross-entropy.
// `corrupt` names one entry whose analytic gradients are deliberately
// perturbed after the backward pass — a negative control proving the
// comparison can fail.
// ---------------------------------------------------------------------------

inline constexpr double kGradCheckTol = 1e-3;

struct OpCheck {
  std::string op;
  double max_rel_err = 0.0;
  size_t checked = 0;  // scalar parameters compared
  bool pass = false;
};

namespace detail_gradcheck {

// Runs one entry: `eval(grads)` rebuilds the forward pass from `ps`, returns
// the loss, and exports parameter gradients when `grads` is non-null. Deep
// compositions use a larger step: their flattest coordinates have gradients
// near 1e-9 where central-difference rounding noise (which shrinks as 1/step)
// would otherwise dominate the relative error.
inline OpCheck check_entry(const std::string& name, ParamStore<double>& ps,
                           const std::function<double(GradStore<double>*)>& eval,
                           bool corrupt_this, double step) {
  GradStore<double> gs(ps);
  eval(&gs);
  if (corrupt_this && !gs.order.empty()) {
    Array<double>& g = gs.at(gs.order.front());
    for (size_t i = 0; i < g.size(); ++i) g[i] = g[i] * 1.5 + 0.5;
  }
  FdReport rep = fd_check_params(ps, gs, [&] { return eval(nullptr); }, step);
  OpCheck out;
  out.op = name;
  out.max_rel_err = rep.max_rel_err;
  out.checked = rep.checked;
  out.pass = rep.max_rel_err <= kGradCheckTol;
  return out;
}

}  // namespace detail_gradcheck

inline std::vector<OpCheck> gradcheck_suite(const std::string& corrupt = "") {
  using G = Graph<double>;
  using model::randn_arr;
  std::vector<OpCheck> table;
  bool corrupt_used = false;

  size_t entry_index = 0;
  auto run = [&](const std::string& name, ParamStore<double>& ps,
                 const std::function<double(GradStore<double>*)>& eval,
                 double step = 1e-5) {
    const bool hit = (name == corrupt);
    corrupt_used = corrupt_used || hit;
    table.push_back(detail_gradcheck::check_entry(name, ps, eval, hit, step));
    ++entry_index;
  };

  // --- element ops -----------------------------------------------------
  auto binary = [&](const std::string& name,
                    const std::function<G::Var(G&, G::Var, G::Var)>& op) {
    Rng rng(9100 + entry_index);
    ParamStore<double> ps;
    ps.add("a", randn_arr<double>(rng, 3, 4, 0.5));
    ps.add("b", randn_arr<double>(rng, 3, 4, 0.5));
    const Array<double> t = randn_arr<double>(rng, 3, 4, 0.5);
    run(name, ps, [&ps, &op, t](GradStore<double>* gs) {
      G g;
      auto out = op(g, g.param("a", &ps.at("a")), g.param("b", &ps.at("b")));
      auto loss = g.sum_sq_diff(out, g.input(t));
      const double v = g.val(loss)[0];
      if (gs != nullptr) {
        g.backward(loss);
        g.export_param_grads(*gs);
      }
      return v;
    });
  };
  binary("add", [](G& g, G::Var a, G::Var b) { return g.add(a, b); });
  binary("sub", [](G& g, G::Var a, G::Var b) { return g.sub(a, b); });
  binary("mul", [](G& g, G::Var a, G::Var b) { return g.mul(a, b); });
  binary("scale", [](G& g, G::Var a, G::Var) { return g.scale(a, 1.7); });

  // --- matmul in all four transpose layouts ------------------------------
  auto matmul_entry = [&](const std::string& name, bool ta, bool tb) {
    Rng rng(9200 + entry_index);
    ParamStore<double> ps;
    ps.add("a", ta ? randn_arr<double>(rng, 4, 3, 0.5)
                   : randn_arr<double>(rng, 3, 4, 0.5));
    ps.add("b", tb ? randn_arr<double>(rng, 5, 4, 0.5)
                   : randn_arr<double>(rng, 4, 5, 0.5));
    const Array<double> t = randn_arr<double>(rng, 3, 5, 0.5);
    run(name, ps, [&ps, ta, tb, t](GradStore<double>* gs) {
      G g;
      auto out = g.matmul(g.param("a", &ps.at("a")), g.param("b", &ps.at("b")),
                          ta, tb);
      auto loss = g.sum_sq_diff(out, g.input(t));
      const double v = g.val(loss)[0];
      if (gs != nullptr) {
        g.backward(loss);
        g.export_param_grads(*gs);
      }
      return v;
    });
  };
  matmul_entry("matmul", false, false);
  matmul_entry("matmul_ta", true, false);
  matmul_entry("matmul_tb", false, true);
  matmul_entry("matmul_tatb", true, true);

  // --- everything else, one bespoke entry each ---------------------------
  auto simple = [&](const std::string& name,
                    const std::function<void(ParamStore<double>&, Rng&)>& setup,
                    const std::function<G::Var(G&, ParamStore<double>&)>& fwd) {
    Rng rng(9300 + entry_index);
    ParamStore<double> ps;
    setup(ps, rng);
    run(name, ps, [&ps, &fwd](GradStore<double>* gs) {
      G g;
      auto loss = fwd(g, ps);
      const double v = g.val(loss)[0];
      if (gs != nullptr) {
        g.backward(loss);
        g.export_param_grads(*gs);
      }
      return v;
    });
  };

  {
    Rng trng(9001);
    const Array<double> t = randn_arr<double>(trng, 3, 5, 0.5);
    simple(
        "add_rowvec",
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("m", randn_arr<double>(rng, 3, 5, 0.5));
          ps.add("v", randn_arr<double>(rng, 1, 5, 0.5));
        },
        [t](G& g, ParamStore<double>& ps) {
          auto out = g.add_rowvec(g.param("m", &ps.at("m")),
                                  g.param("v", &ps.at("v")));
          return g.sum_sq_diff(out, g.input(t));
        });
  }
  {
    Rng trng(9002);
    const Array<double> t = randn_arr<double>(trng, 4, 6, 0.5);
    simple(
        "layernorm",
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("x", randn_arr<double>(rng, 4, 6, 0.8));
          Array<double> gmm = randn_arr<double>(rng, 1, 6, 0.1);
          for (size_t i = 0; i < gmm.size(); ++i) gmm[i] += 1.0;
          ps.add("gamma", gmm);
          ps.add("beta", randn_arr<double>(rng, 1, 6, 0.1));
        },
        [t](G& g, ParamStore<double>& ps) {
          auto out = g.layernorm(g.param("x", &ps.at("x")),
                                 g.param("gamma", &ps.at("gamma")),
                                 g.param("beta", &ps.at("beta")), 1e-5);
          return g.sum_sq_diff(out, g.input(t));
        });
  }
  {
    Rng trng(9003);
    const Array<double> t = randn_arr<double>(trng, 3, 4, 0.5);
    simple(
        "gelu",
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("x", randn_arr<double>(rng, 3, 4, 0.8));
        },
        [t](G& g, ParamStore<double>& ps) {
          return g.sum_sq_diff(g.gelu(g.param("x", &ps.at("x"))), g.input(t));
        });
  }
  {
    Rng trng(9004);
    const Array<double> t = randn_arr<double>(trng, 3, 5, 0.3);
    simple(
        "softmax_rows",
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("x", randn_arr<double>(rng, 3, 5, 0.8));
        },
        [t](G& g, ParamStore<double>& ps) {
          return g.sum_sq_diff(g.softmax_rows(g.param("x", &ps.at("x"))),
                               g.input(t));
        });
  }
  {
    Rng trng(9005);
    const Array<double> t = randn_arr<double>(trng, 3, 4, 0.5);
    simple(
        "slice_rows",
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("x", randn_arr<double>(rng, 5, 4, 0.5));
        },
        [t](G& g, ParamStore<double>& ps) {
          return g.sum_sq_diff(g.slice_rows(g.param("x", &ps.at("x")), 1, 4),
                               g.input(t));
        });
  }
  {
    Rng trng(9006);
    const Array<double> t = randn_arr<double>(trng, 5, 4, 0.5);
    simple(
        "concat_rows",
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("a", randn_arr<double>(rng, 2, 4, 0.5));
          ps.add("b", randn_arr<double>(rng, 3, 4, 0.5));
        },
        [t](G& g, ParamStore<double>& ps) {
          auto out = g.concat_rows(
              {g.param("a", &ps.at("a")), g.param("b", &ps.at("b"))});
          return g.sum_sq_diff(out, g.input(t));
        });
  }
  {
    Rng trng(9007);
    const Array<double> t = randn_arr<double>(trng, 3, 4, 0.5);
    simple(
        "slice_cols",
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("x", randn_arr<double>(rng, 3, 6, 0.5));
        },
        [t](G& g, ParamStore<double>& ps) {
          return g.sum_sq_diff(g.slice_cols(g.param("x", &ps.at("x")), 1, 5),
                               g.input(t));
        });
  }
  {
    Rng trng(9008);
    const Array<double> t = randn_arr<double>(trng, 3, 6, 0.5);
    simple(
        "concat_cols",
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("a", randn_arr<double>(rng, 3, 2, 0.5));
          ps.add("b", randn_arr<double>(rng, 3, 4, 0.5));
        },
        [t](G& g, ParamStore<double>& ps) {
          auto out = g.concat_cols(
              {g.param("a", &ps.at("a")), g.param("b", &ps.at("b"))});
          return g.sum_sq_diff(out, g.input(t));
        });
  }
  {
    Rng trng(9009);
    const Array<double> t = randn_arr<double>(trng, 4, 4, 0.5);
    simple(
        "gather_rows",  // repeated index exercises gradient accumulation
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("x", randn_arr<double>(rng, 5, 4, 0.5));
        },
        [t](G& g, ParamStore<double>& ps) {
          return g.sum_sq_diff(
              g.gather_rows(g.param("x", &ps.at("x")), {0, 2, 2, 4}),
              g.input(t));
        });
  }
  {
    Rng trng(9010);
    const Array<double> t = randn_arr<double>(trng, 5, 4, 0.5);
    simple(
        "scatter_assemble",
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("vis", randn_arr<double>(rng, 3, 4, 0.5));
          ps.add("mask", randn_arr<double>(rng, 1, 4, 0.5));
        },
        [t](G& g, ParamStore<double>& ps) {
          auto out = g.scatter_assemble(g.param("vis", &ps.at("vis")),
                                        g.param("mask", &ps.at("mask")),
                                        {0, 2, 4}, 5);
          return g.sum_sq_diff(out, g.input(t));
        });
  }
  {
    Rng trng(9011);
    const Array<double> t = randn_arr<double>(trng, 32, 3, 0.5);
    simple(
        "grid_resample",
        [](ParamStore<double>& ps, Rng& rng) {
          ps.add("x", randn_arr<double>(rng, 8, 3, 0.5));
        },
        [t](G& g, ParamStore<double>& ps) {
          auto out = g.grid_resample(g.param("x", &ps.at("x")), GridShape{2, 4},
                                     GridShape{4, 8});
          return g.sum_sq_diff(out, g.input(t));
        });
  }
  simple(
      "sum",
      [](ParamStore<double>& ps, Rng& rng) {
        ps.add("x", randn_arr<double>(rng, 3, 4, 0.5));
      },
      [](G& g, ParamStore<double>& ps) {
        auto x = g.param("x", &ps.at("x"));
        return g.sum(g.mul(x, x));
      });
  simple(
      "sum_sq_diff",
      [](ParamStore<double>& ps, Rng& rng) {
        ps.add("a", randn_arr<double>(rng, 3, 4, 0.5));
        ps.add("b", randn_arr<double>(rng, 3, 4, 0.5));
      },
      [](G& g, ParamStore<double>& ps) {
        return g.sum_sq_diff(g.param("a", &ps.at("a")),
                             g.param("b", &ps.at("b")));
      });
  simple(
      "cross_entropy_rows",  // includes one ignored row
      [](ParamStore<double>& ps, Rng& rng) {
        ps.add("logits", randn_arr<double>(rng, 4, 5, 0.8));
      },
      [](G& g, ParamStore<double>& ps) {
        return g.cross_entropy_rows(g.param("logits", &ps.at("logits")),
                                    {1, -1, 0, 4}, -1);
      });

  // --- multi-head attention over its projection parameters ---------------
  {
    Rng trng(9012);
    const Array<double> t = randn_arr<double>(trng, 3, 8, 0.3);
    const Array<double> xq = randn_arr<double>(trng, 3, 8, 0.5);
    const Array<double> xkv = randn_arr<double>(trng, 5, 8, 0.5);
    Rng prng(9013);
    ParamStore<double> ps;
    model::init_attention(ps, prng, "attn.", 8);
    run("attention", ps, [&ps, t, xq, xkv](GradStore<double>* gs) {
      G g;
      model::Ctx<double> c{&g, &ps, true};
      auto out = model::mha(c, g.input(xq), g.input(xkv), "attn.", 2);
      auto loss = g.sum_sq_diff(out, g.input(t));
      const double v = g.val(loss)[0];
      if (gs != nullptr) {
        g.backward(loss);
        g.export_param_grads(*gs);
      }
      return v;
    }, 1e-4);
  }

  // --- full encoder forward ----------------------------------------------
  {
    const model::EncoderConfig cfg = model::EncoderConfig::tiny();
    Rng prng(9014);
    ParamStore<double> ps;
    model::init_encoder(ps, cfg, prng);
    Rng trng(9015);
    const Array<double> pix =
        randn_arr<double>(trng, 16, cfg.patch_len(), 0.4);
    const Array<double> t = randn_arr<double>(trng, 16, cfg.embed_dim, 0.3);
    run("encoder", ps, [&ps, &cfg, pix, t](GradStore<double>* gs) {
      G g;
      model::Ctx<double> c{&g, &ps, true};
      auto out = model::encode(c, pix, GridShape{2, 8}, cfg);
      auto loss = g.sum_sq_diff(out.patches, g.input(t));
      const double v = g.val(loss)[0];
      if (gs != nullptr) {
        g.backward(loss);
        g.export_param_grads(*gs);
      }
      return v;
    }, 1e-4);
  }

  // --- the composed pretraining losses ------------------------------------
  // Three encodes (small, large, masked), token upsampling, both decoders.
  // Targets sit near the initial predictions and the final-norm gain is
  // scaled down so every loss is small at the test point — central
  // differences are then far from their rounding floor.
  {
    const model::EncoderConfig cfg = model::EncoderConfig::tiny();
    Rng irng(9020);
    const Array<double> pix_small = randn_arr<double>(irng, 4, cfg.patch_len(), 0.4);
    const Array<double> pix_large = randn_arr<double>(irng, 16, cfg.patch_len(), 0.4);
    const Array<double> pix_masked = randn_arr<double>(irng, 16, cfg.patch_len(), 0.4);
    Rng mrng(9021);
    const MaskPattern mask = random_mask(16, 0.8, mrng);
    const std::vector<size_t> vis = mask.visible_indices();

    ParamStore<double> ps;
    Rng prng(9022);
    model::init_encoder(ps, cfg, prng);
    model::init_nsp(ps, prng, cfg.embed_dim, cfg.embed_dim);
    model::init_mim(ps, prng, cfg.embed_dim, cfg.embed_dim);
    for (auto& x : ps.at("encoder.ln_f.g").v) x *= 0.05;

    // Probe pass: place the targets near the initial predictions.
    Array<double> t_nsp({16, cfg.embed_dim}), t_mim({16, cfg.embed_dim});
    {
      G g;
      model::Ctx<double> c{&g, &ps, true};
      auto es = model::encode(c, pix_small, GridShape{1, 4}, cfg);
      auto em = model::encode(c, pix_masked, GridShape{2, 8}, cfg, &vis);
      auto F = model::upsample_tokens_bicubic(g, es.patches, GridShape{1, 4},
                                              GridShape{2, 8});
      auto pred_nsp = model::nsp_decode(c, F, es.patches, cfg.heads, "nsp.", 16);
      auto assembled =
          g.scatter_assemble(em.patches, c.leaf("mim.mask_token"), vis, 16);
      auto f_mim = g.add(assembled,
                         model::pos_for_grid(c, cfg, GridShape{2, 8}, "encoder."));
      auto pred_mim = model::mim_decode(c, f_mim, es.patches, pred_nsp, cfg.heads);
      Rng trng(9023);
      const Array<double>&pn = g.val(pred_nsp), &pm = g.val(pred_mim);
      for (size_t i = 0; i < t_nsp.size(); ++i)
        t_nsp[i] = pn[i] + 0.01 * trng.normal();
      for (size_t i = 0; i < t_mim.size(); ++i)
        t_mim[i] = pm[i] + 0.01 * trng.normal();
    }

    auto loss_entry = [&](const std::string& name, int pick) {
      run(name, ps, [&, pick](GradStore<double>* gs) {
        G g;
        model::Ctx<double> c{&g, &ps, true};
        auto es = model::encode(c, pix_small, GridShape{1, 4}, cfg);
        auto el = model::encode(c, pix_large, GridShape{2, 8}, cfg);
        auto em = model::encode(c, pix_masked, GridShape{2, 8}, cfg, &vis);
        auto F = model::upsample_tokens_bicubic(g, es.patches, GridShape{1, 4},
                                                GridShape{2, 8});
        auto pred_nsp =
            model::nsp_decode(c, F, es.patches, cfg.heads, "nsp.", 16);
        auto assembled =
            g.scatter_assemble(em.patches, c.leaf("mim.mask_token"), vis, 16);
        auto f_mim = g.add(
            assembled, model::pos_for_grid(c, cfg, GridShape{2, 8}, "encoder."));
        auto pred_mim =
            model::mim_decode(c, f_mim, es.patches, pred_nsp, cfg.heads);
        auto l_nsp = objectives::nsp_loss(g, pred_nsp, g.input(t_nsp));
        auto l_mim = objectives::mim_loss(g, pred_mim, g.input(t_mim), mask);
        auto l_mla = objectives::mla_loss(g, em.cls, es.cls, el.cls);
        auto l_total = objectives::total_loss(g, l_nsp, l_mim, l_mla);
        const G::Var losses[4] = {l_nsp, l_mim, l_mla, l_total};
        auto loss = losses[pick];
        const double v = g.val(loss)[0];
        if (gs != nullptr) {
          g.backward(loss);
          g.export_param_grads(*gs);
        }
        return v;
      });
    };
    loss_entry("loss_nsp", 0);
    loss_entry("loss_mim", 1);
    loss_entry("loss_mla", 2);
    loss_entry("loss_total", 3);
  }

  // --- fine-tuning cross-entropy over encoder + decoder -------------------
  {
    recognizer::RecognizerConfig rc;
    rc.enc = model::EncoderConfig::tiny();
    rc.enc.depth = 1;
    rc.img_h = 8;
    rc.img_w = 32;
    rc.depth = 1;
    rc.hidden = 8;
    rc.heads = 2;
    rc.max_len = 4;
    ParamStore<double> ps;
    Rng prng(9030);
    model::init_encoder(ps, rc.enc, prng);
    recognizer::init_recognizer(ps, prng, rc);
    const std::vector<TextSample> batch = {render_synthetic("ab", 9031)};
    run("finetune_ce", ps, [&ps, &rc, &batch](GradStore<double>* gs) {
      if (gs != nullptr) return recognizer::finetune_step(batch, ps, rc, *gs);
      GradStore<double> scratch(ps);
      return recognizer::finetune_step(batch, ps, rc, scratch);
    }, 3e-4);
  }

  if (!corrupt.empty() && !corrupt_used)
    throw ConfigError("gradcheck: no suite entry named '" + corrupt + "'");
  return table;
}

inline bool gradcheck_passed(const std::vector<OpCheck>& table) {
  for (const OpCheck& c : table)
    if (!c.pass) return false;
  return !table.empty();
}

}  // namespace mnsp
