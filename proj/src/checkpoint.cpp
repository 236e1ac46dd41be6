// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "mnsp/checkpoint.hpp"

#include <cstdio>
#include <fstream>

namespace mnsp {

void write_file_atomic(const std::filesystem::path& path,
                       const std::vector<char>& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot open for writing: " + tmp.string());
    if (!bytes.empty()) f.write(bytes.data(), std::streamsize(bytes.size()));
    f.flush();
    if (!f) throw InputError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw InputError("rename failed for " + path.string() + ": " + ec.message());
  }
}

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw InputError("cannot open: " + path.string());
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<char> bytes(static_cast<size_t>(n));
  if (n > 0 && !f.read(bytes.data(), n))
    throw InputError("read failed: " + path.string());
  return bytes;
}

}  // namespace mnsp
