// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "mnsp/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "mnsp/image.hpp"

namespace mnsp {
namespace {

using nlohmann::json;

std::string join_key(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

bool is_integer(const json& v) {
  return v.is_number_integer() || v.is_number_unsigned();
}

// Leaf type compatibility, with the default value acting as the schema.
void check_leaf(const json& def, const json& val, const std::string& path) {
  if (def.is_boolean()) {
    if (!val.is_boolean())
      throw ConfigError("config key " + path + ": expected true or false");
  } else if (def.is_string()) {
    if (!val.is_string())
      throw ConfigError("config key " + path + ": expected a string");
  } else if (def.is_number_unsigned()) {
    if (!is_integer(val) || (val.is_number_integer() && val.get<int64_t>() < 0))
      throw ConfigError("config key " + path +
                        ": expected a non-negative integer");
  } else if (def.is_number()) {
    if (!val.is_number())
      throw ConfigError("config key " + path + ": expected a number");
  } else if (def.is_array()) {
    if (!val.is_array())
      throw ConfigError("config key " + path + ": expected an array");
    for (const json& e : val)
      if (!is_integer(e) || (e.is_number_integer() && e.get<int64_t>() < 0))
        throw ConfigError("config key " + path +
                          ": expected non-negative integer elements");
  } else {
    throw ContractError("config schema holds an unsupported type at " + path);
  }
}

// Rejects keys absent from the schema and values of the wrong shape.
void validate_against(const json& def, const json& user, const std::string& path) {
  if (def.is_object()) {
    if (!user.is_object())
      throw ConfigError(path.empty()
                            ? std::string("config: top level must be an object")
                            : "config key " + path + ": expected an object");
    for (const auto& [key, val] : user.items()) {
      if (!def.contains(key))
        throw ConfigError("unknown config key: " + join_key(path, key));
      validate_against(def.at(key), val, join_key(path, key));
    }
  } else {
    check_leaf(def, user, path);
  }
}

void deep_merge(json& dst, const json& src) {
  for (const auto& [key, val] : src.items()) {
    if (val.is_object() && dst.at(key).is_object())
      deep_merge(dst.at(key), val);
    else
      dst.at(key) = val;
  }
}

// One "a.b.c=value" assignment. Values parse as JSON where possible; keys
// whose default is a string take the raw text verbatim.
void apply_override(json& doc, const json& defs, const std::string& spec) {
  const size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key=value: " + spec);
  const std::string key = spec.substr(0, eq);
  const std::string text = spec.substr(eq + 1);

  json* slot = &doc;
  const json* def = &defs;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (!def->is_object() || !def->contains(part))
      throw ConfigError("unknown config key: " + key);
    slot = &slot->at(part);
    def = &def->at(part);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (def->is_object())
    throw ConfigError("config key " + key +
                      ": cannot assign to a group; pick one of its fields");

  if (def->is_string()) {
    *slot = text;
    return;
  }
  const json parsed = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded())
    throw ConfigError("config key " + key + ": cannot parse value '" + text + "'");
  check_leaf(*def, parsed, key);
  *slot = parsed;
}

uint64_t get_uint(const json& node, const char* key, const std::string& path) {
  const json& v = node.at(key);
  if (!is_integer(v) || (v.is_number_integer() && v.get<int64_t>() < 0))
    throw ConfigError("config key " + path + ": expected a non-negative integer");
  return v.get<uint64_t>();
}

double get_double(const json& node, const char* key, const std::string& path) {
  const json& v = node.at(key);
  if (!v.is_number())
    throw ConfigError("config key " + path + ": expected a number");
  return v.get<double>();
}

uint64_t parse_env_seed(const char* text) {
  if (text == nullptr || *text == '\0')
    throw ConfigError("MNSP_SEED: expected a non-negative integer");
  char* end = nullptr;
  const unsigned long long v = std::strtoull(text, &end, 10);
  if (end == text || *end != '\0' || std::string(text).find('-') != std::string::npos)
    throw ConfigError("MNSP_SEED: expected a non-negative integer, got '" +
                      std::string(text) + "'");
  return uint64_t(v);
}

RunConfig decode(json doc) {
  RunConfig c;
  c.seed = get_uint(doc, "seed", "seed");
  c.precision = doc.at("precision").get<std::string>();
  if (c.precision != "f32" && c.precision != "f64")
    throw ConfigError("config key precision: expected \"f32\" or \"f64\"");
  c.data_dir = doc.at("data").at("dir").get<std::string>();

  const json& e = doc.at("encoder");
  model::EncoderConfig enc;
  enc.embed_dim = get_uint(e, "embed_dim", "encoder.embed_dim");
  enc.depth = get_uint(e, "depth", "encoder.depth");
  enc.heads = get_uint(e, "heads", "encoder.heads");
  enc.patch = get_uint(e, "patch", "encoder.patch");
  enc.channels = get_uint(e, "channels", "encoder.channels");
  const json& mg = e.at("max_grid");
  if (!mg.is_array() || mg.size() != 2)
    throw ConfigError("config key encoder.max_grid: expected [rows, cols]");
  enc.max_grid = GridShape{mg.at(0).get<size_t>(), mg.at(1).get<size_t>()};

  const json& sc = doc.at("scales");
  c.pretrain.enc = enc;
  c.pretrain.scales =
      ScaleSequence::from_top(get_uint(sc, "top_height", "scales.top_height"),
                              get_uint(sc, "top_width", "scales.top_width"),
                              enc.patch);

  const json& p = doc.at("pretrain");
  c.pretrain.base_lr = get_double(p, "base_lr", "pretrain.base_lr");
  c.pretrain.batch_size = get_uint(p, "batch_size", "pretrain.batch_size");
  c.pretrain.epochs = get_uint(p, "epochs", "pretrain.epochs");
  c.pretrain.warmup_epochs = get_uint(p, "warmup_epochs", "pretrain.warmup_epochs");
  c.pretrain.mask_ratio = get_double(p, "mask_ratio", "pretrain.mask_ratio");
  c.pretrain.target_mode =
      objectives::parse_target_mode(p.at("target_mode").get<std::string>());
  c.pretrain.teacher_mode =
      engine::parse_teacher_mode(p.at("teacher_mode").get<std::string>());
  c.pretrain.teacher_checkpoint = p.at("teacher_checkpoint").get<std::string>();
  c.pretrain.checkpoint_every =
      get_uint(p, "checkpoint_every", "pretrain.checkpoint_every");
  c.pretrain.seed = c.seed;

  const json& fl = doc.at("flags");
  c.pretrain.flags.mla = fl.at("mla").get<bool>();
  c.pretrain.flags.guidance = fl.at("guidance").get<bool>();
  c.pretrain.flags.zoom_in = fl.at("zoom_in").get<bool>();
  c.pretrain.flags.augment = fl.at("augment").get<bool>();

  const json& op = doc.at("optimizer");
  c.pretrain.opt.beta1 = get_double(op, "beta1", "optimizer.beta1");
  c.pretrain.opt.beta2 = get_double(op, "beta2", "optimizer.beta2");
  c.pretrain.opt.eps = get_double(op, "eps", "optimizer.eps");
  c.pretrain.opt.weight_decay =
      get_double(op, "weight_decay", "optimizer.weight_decay");
  c.pretrain.opt.clip_norm = get_double(op, "clip_norm", "optimizer.clip_norm");

  const json& r = doc.at("recognizer");
  c.rec.enc = enc;
  c.rec.depth = get_uint(r, "depth", "recognizer.depth");
  c.rec.hidden = get_uint(r, "hidden", "recognizer.hidden");
  c.rec.heads = get_uint(r, "heads", "recognizer.heads");
  c.rec.max_len = get_uint(r, "max_len", "recognizer.max_len");
  c.rec.lr = get_double(r, "lr", "recognizer.lr");
  c.rec.img_h = get_uint(r, "img_h", "recognizer.img_h");
  c.rec.img_w = get_uint(r, "img_w", "recognizer.img_w");

  const json& f = doc.at("finetune");
  c.finetune.steps = get_uint(f, "steps", "finetune.steps");
  c.finetune.batch_size = get_uint(f, "batch_size", "finetune.batch_size");
  c.finetune.warmup_steps = get_uint(f, "warmup_steps", "finetune.warmup_steps");
  c.finetune.checkpoint_every =
      get_uint(f, "checkpoint_every", "finetune.checkpoint_every");

  c.doc = std::move(doc);
  c.pretrain.validate();
  c.rec.validate();
  c.finetune.validate();
  return c;
}

}  // namespace

nlohmann::json RunConfig::defaults() {
  const engine::PretrainConfig p;
  const recognizer::RecognizerConfig r;
  const FinetunePlan f;
  json j;
  j["seed"] = uint64_t(0);
  j["precision"] = "f64";
  j["data"] = {{"dir", ""}};
  j["encoder"] = {{"embed_dim", p.enc.embed_dim}, {"depth", p.enc.depth},
                  {"heads", p.enc.heads},         {"patch", p.enc.patch},
                  {"channels", p.enc.channels},
                  {"max_grid", {p.enc.max_grid.rows, p.enc.max_grid.cols}}};
  j["scales"] = {{"top_height", p.scales.top().height},
                 {"top_width", p.scales.top().width}};
  j["pretrain"] = {{"base_lr", p.base_lr},
                   {"batch_size", p.batch_size},
                   {"epochs", p.epochs},
                   {"warmup_epochs", p.warmup_epochs},
                   {"mask_ratio", p.mask_ratio},
                   {"target_mode", objectives::to_string(p.target_mode)},
                   {"teacher_mode", engine::to_string(p.teacher_mode)},
                   {"teacher_checkpoint", p.teacher_checkpoint},
                   {"checkpoint_every", p.checkpoint_every}};
  j["flags"] = {{"mla", p.flags.mla},
                {"guidance", p.flags.guidance},
                {"zoom_in", p.flags.zoom_in},
                {"augment", p.flags.augment}};
  j["optimizer"] = {{"beta1", p.opt.beta1},
                    {"beta2", p.opt.beta2},
                    {"eps", p.opt.eps},
                    {"weight_decay", p.opt.weight_decay},
                    {"clip_norm", p.opt.clip_norm}};
  j["recognizer"] = {{"depth", r.depth},     {"hidden", r.hidden},
                     {"heads", r.heads},     {"max_len", r.max_len},
                     {"lr", r.lr},           {"img_h", r.img_h},
                     {"img_w", r.img_w}};
  j["finetune"] = {{"steps", f.steps},
                   {"batch_size", f.batch_size},
                   {"warmup_steps", f.warmup_steps},
                   {"checkpoint_every", f.checkpoint_every}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& user) {
  const json defs = defaults();
  validate_against(defs, user, "");
  json doc = defs;
  deep_merge(doc, user);
  return decode(std::move(doc));
}

RunConfig RunConfig::load(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides,
                          bool use_env_seed) {
  json user = json::object();
  if (!file.empty()) {
    std::ifstream f(file);
    if (!f) throw ConfigError("cannot read config file: " + file.string());
    try {
      user = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + file.string() + ": " + e.what());
    }
  }
  const json defs = defaults();
  validate_against(defs, user, "");
  json doc = defs;
  deep_merge(doc, user);

  bool seed_set = user.contains("seed");
  for (const std::string& spec : overrides) {
    apply_override(doc, defs, spec);
    if (spec.rfind("seed=", 0) == 0) seed_set = true;
  }
  if (!seed_set && use_env_seed) {
    const char* env = std::getenv("MNSP_SEED");
    if (env != nullptr) doc["seed"] = parse_env_seed(env);
  }
  return decode(std::move(doc));
}

// ---------------------------------------------------------------------------
// Corpus IO
// ---------------------------------------------------------------------------

void save_corpus(const std::filesystem::path& dir,
                 const std::vector<TextSample>& samples,
                 const nlohmann::json& config_snapshot) {
  std::filesystem::create_directories(dir);
  std::ofstream mf(dir / "manifest.jsonl", std::ios::trunc);
  if (!mf) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
  char name[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    const TextSample& s = samples[i];
    std::snprintf(name, sizeof name, "img_%05zu.pgm", i);
    write_pnm((dir / name).string(), s.image);
    const json line = {{"file", name},
                       {"label", s.label},
                       {"box", {s.text_box.top, s.text_box.left,
                                s.text_box.bottom, s.text_box.right}},
                       {"source_h", s.source_h},
                       {"source_w", s.source_w}};
    mf << line.dump() << "\n";
  }
  if (!mf.flush()) throw IoError("short write: manifest.jsonl");

  json meta;
  meta["format"] = kCorpusFormat;
  meta["count"] = samples.size();
  meta["config"] = config_snapshot;
  std::ofstream cf(dir / "corpus.json", std::ios::trunc);
  if (!cf) throw IoError("cannot write " + (dir / "corpus.json").string());
  cf << meta.dump(2) << "\n";
  if (!cf.flush()) throw IoError("short write: corpus.json");
}

std::vector<TextSample> load_corpus(const std::filesystem::path& dir) {
  const std::filesystem::path manifest = dir / "manifest.jsonl";
  std::ifstream mf(manifest);
  if (!mf) throw InputError("corpus manifest not found: " + manifest.string());

  std::vector<TextSample> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      TextSample s;
      s.label = j.at("label").get<std::string>();
      const json& b = j.at("box");
      s.text_box = Box{b.at(0).get<size_t>(), b.at(1).get<size_t>(),
                       b.at(2).get<size_t>(), b.at(3).get<size_t>()};
      s.source_h = j.at("source_h").get<size_t>();
      s.source_w = j.at("source_w").get<size_t>();
      s.image = read_pnm((dir / j.at("file").get<std::string>()).string());
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw InputError("corpus manifest " + manifest.string() + " line " +
                       std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mnsp
