// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "smit/tensor.hpp"

namespace smit {

/// Checkpoint on disk: `checkpoint.json` manifest
///   {"params":[{"name","shape","dtype","file","offset"}...], "config":{...}, "step":n, ...}
/// plus one flat little-endian float64 blob holding every array back to back.
struct Checkpoint {
  std::map<std::string, Tensor> params;  // arbitrary named tensors (student.*, teacher.*, ...)
  std::string config_json = "{}";        // embedded effective config
  int64_t step = 0;
  int64_t epoch = 0;
  std::map<std::string, std::string> extra;  // small string metadata
};

/// Writes `<dir>/checkpoint.json` + `<dir>/checkpoint.bin` (creates dir).
void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace smit
