// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace smit {

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["step"] = ckpt.step;
  manifest["epoch"] = ckpt.epoch;
  manifest["config"] = json::parse(ckpt.config_json);
  for (const auto& [k, v] : ckpt.extra) manifest["extra"][k] = v;
  json params = json::array();
  int64_t offset = 0;
  for (const auto& [name, t] : ckpt.params) {
    json p;
    p["name"] = name;
    p["shape"] = t.shape;
    p["dtype"] = "f64";
    p["file"] = "checkpoint.bin";
    p["offset"] = offset;
    params.push_back(p);
    offset += t.numel() * static_cast<int64_t>(sizeof(double));
  }
  manifest["params"] = params;

  std::ofstream blob(fs::path(dir) / "checkpoint.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write checkpoint blob in " + dir);
  for (const auto& [name, t] : ckpt.params)
    blob.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!blob) throw std::runtime_error("checkpoint blob write failed in " + dir);
  blob.close();

  std::ofstream mf(fs::path(dir) / "checkpoint.json");
  if (!mf) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
  mf << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "checkpoint.json");
  if (!mf) throw std::runtime_error("no checkpoint manifest in " + dir);
  json manifest;
  mf >> manifest;
  Checkpoint ckpt;
  ckpt.step = manifest.at("step").get<int64_t>();
  ckpt.epoch = manifest.value("epoch", int64_t{0});
  ckpt.config_json = manifest.at("config").dump();
  if (manifest.contains("extra"))
    for (auto it = manifest["extra"].begin(); it != manifest["extra"].end(); ++it)
      ckpt.extra[it.key()] = it.value().get<std::string>();

  std::ifstream blob(fs::path(dir) / "checkpoint.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("no checkpoint blob in " + dir);
  for (const auto& p : manifest.at("params")) {
    const auto name = p.at("name").get<std::string>();
    const auto shape = p.at("shape").get<std::vector<int64_t>>();
    const auto dtype = p.at("dtype").get<std::string>();
    if (dtype != "f64") throw std::runtime_error("checkpoint: unsupported dtype " + dtype);
    const auto offset = p.at("offset").get<int64_t>();
    Tensor t(shape);
    blob.seekg(offset);
    blob.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!blob) throw std::runtime_error("checkpoint: truncated blob reading " + name);
    ckpt.params.emplace(name, std::move(t));
  }
  return ckpt;
}

}  // namespace smit
