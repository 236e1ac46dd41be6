// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mnsp/common.hpp"
#include "mnsp/optimizer.hpp"
#include "mnsp/params.hpp"

namespace mnsp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint files are little-endian raw arrays");

template <class T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() {
  return "f32";
}
template <>
constexpr const char* dtype_name<double>() {
  return "f64";
}

// --- raw file helpers (checkpoint.cpp) ------------------------------------

// Writes bytes to `path` via a temp file in the same directory followed by an
// atomic rename, so readers never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path,
                       const std::vector<char>& bytes);
std::vector<char> read_file_bytes(const std::filesystem::path& path);

// --- checkpoint layout -----------------------------------------------------
//
// A checkpoint is a directory holding
//   params.bin    little-endian raw arrays, back to back
//   optim.bin     optimizer first/second moments (optional)
//   manifest.json names, shapes, per-array dtype, byte offsets, step,
//                 optimizer step count, and the run-config snapshot
// The manifest is written last so a complete manifest implies complete data.

namespace detail {

template <class T>
std::vector<char> pack_arrays(const std::vector<std::string>& order,
                              const std::unordered_map<std::string, Array<T>>& by_name,
                              nlohmann::json& entries) {
  std::vector<char> bytes;
  for (const auto& name : order) {
    const Array<T>& a = by_name.at(name);
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = a.dims;
    e["dtype"] = dtype_name<T>();
    e["offset"] = bytes.size();
    entries.push_back(std::move(e));
    const size_t n = a.size() * sizeof(T);
    const size_t at = bytes.size();
    bytes.resize(at + n);
    std::memcpy(bytes.data() + at, a.v.data(), n);
  }
  return bytes;
}

template <class T>
Array<T> unpack_array(const std::vector<char>& bytes, const nlohmann::json& e,
                      const std::filesystem::path& file) {
  Array<T> a;
  a.dims = e.at("shape").get<std::vector<size_t>>();
  size_t n = 1;
  for (size_t d : a.dims) n *= d;
  if (a.dims.empty()) n = 0;
  const std::string dtype = e.at("dtype").get<std::string>();
  const size_t offset = e.at("offset").get<size_t>();
  const size_t elem = dtype == "f64" ? 8 : 4;
  if (dtype != "f32" && dtype != "f64")
    throw InputError("checkpoint: unknown dtype '" + dtype + "' in " + file.string());
  if (offset + n * elem > bytes.size())
    throw InputError("checkpoint: truncated array data in " + file.string());
  a.v.resize(n);
  if (dtype == "f64") {
    const double* src = reinterpret_cast<const double*>(bytes.data() + offset);
    for (size_t i = 0; i < n; ++i) a.v[i] = T(src[i]);
  } else {
    const float* src = reinterpret_cast<const float*>(bytes.data() + offset);
    for (size_t i = 0; i < n; ++i) a.v[i] = T(src[i]);
  }
  return a;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const ParamStore<T>& params,
                     size_t step, const nlohmann::json& config_snapshot,
                     const AdamW<T>* opt = nullptr) {
  std::filesystem::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "mnsp-checkpoint-v1";
  manifest["step"] = step;
  manifest["config"] = config_snapshot;
  manifest["params"] = nlohmann::json::array();
  write_file_atomic(dir / "params.bin",
                    detail::pack_arrays(params.order, params.by_name,
                                        manifest["params"]));

  if (opt != nullptr) {
    // The optimizer may cover a subset of the stored arrays (frozen teacher
    // copies carry no moments); only tracked names are serialized.
    std::vector<std::string> order;
    std::unordered_map<std::string, Array<T>> moments;
    for (const auto& name : params.order) {
      auto it = opt->m.by_name.find(name);
      if (it == opt->m.by_name.end()) continue;
      order.push_back("m." + name);
      moments.emplace("m." + name, it->second);
    }
    for (const auto& name : params.order) {
      auto it = opt->v.by_name.find(name);
      if (it == opt->v.by_name.end()) continue;
      order.push_back("v." + name);
      moments.emplace("v." + name, it->second);
    }
    manifest["optim"] = nlohmann::json::array();
    manifest["optim_t"] = opt->t;
    write_file_atomic(dir / "optim.bin",
                      detail::pack_arrays(order, moments, manifest["optim"]));
  }

  const std::string text = manifest.dump(2);
  write_file_atomic(dir / "manifest.json",
                    std::vector<char>(text.begin(), text.end()));
}

template <class T>
struct LoadedCheckpoint {
  ParamStore<T> params;
  GradStore<T> opt_m, opt_v;
  size_t optim_t = 0;
  bool has_optim = false;
  size_t step = 0;
  nlohmann::json config;

  // Transplants the saved optimizer moments into a freshly built optimizer.
  // The optimizer's own tracked names drive the loop, so stored arrays it
  // does not cover (e.g. frozen teacher copies) are ignored.
  void restore_optimizer(AdamW<T>& opt) const {
    if (!has_optim) throw ContractError("checkpoint has no optimizer state");
    for (const auto& name : opt.m.order) {
      if (!opt_m.by_name.count(name) || !opt_v.by_name.count(name))
        throw ContractError("checkpoint lacks optimizer state for " + name);
      opt.m.at(name) = opt_m.by_name.at(name);
      opt.v.at(name) = opt_v.by_name.at(name);
    }
    opt.t = optim_t;
  }
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const std::vector<char> text = read_file_bytes(manifest_path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw InputError("checkpoint: malformed manifest " + manifest_path.string() +
                     ": " + e.what());
  }

  LoadedCheckpoint<T> out;
  try {
    if (manifest.at("format").get<std::string>() != "mnsp-checkpoint-v1")
      throw InputError("checkpoint: unsupported format in " + manifest_path.string());
    out.step = manifest.at("step").get<size_t>();
    out.config = manifest.value("config", nlohmann::json::object());

    const std::vector<char> pbytes = read_file_bytes(dir / "params.bin");
    for (const auto& e : manifest.at("params"))
      out.params.add(e.at("name").get<std::string>(),
                     detail::unpack_array<T>(pbytes, e, dir / "params.bin"));

    if (manifest.contains("optim")) {
      out.has_optim = true;
      out.optim_t = manifest.at("optim_t").get<size_t>();
      out.opt_m = GradStore<T>(out.params);
      out.opt_v = GradStore<T>(out.params);
      const std::vector<char> obytes = read_file_bytes(dir / "optim.bin");
      for (const auto& e : manifest.at("optim")) {
        const std::string name = e.at("name").get<std::string>();
        Array<T> a = detail::unpack_array<T>(obytes, e, dir / "optim.bin");
        if (name.rfind("m.", 0) == 0)
          out.opt_m.at(name.substr(2)) = std::move(a);
        else if (name.rfind("v.", 0) == 0)
          out.opt_v.at(name.substr(2)) = std::move(a);
        else
          throw InputError("checkpoint: unexpected optimizer entry " + name);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("checkpoint: malformed manifest " + manifest_path.string() +
                     ": " + e.what());
  } catch (const ContractError& e) {
    throw InputError(std::string("checkpoint: invalid contents: ") + e.what());
  }
  return out;
}

}  // namespace mnsp
