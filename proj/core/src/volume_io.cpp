// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace smit {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::CT: return "CT";
    case Modality::MR: return "MR";
    default: return "SYNTH";
  }
}

Modality modality_from_string(const std::string& s) {
  if (s == "CT") return Modality::CT;
  if (s == "MR") return Modality::MR;
  if (s == "SYNTH") return Modality::SYNTH;
  throw std::invalid_argument("unknown modality: " + s);
}

namespace {

bool ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

void parse_sidecar(const json& j, std::array<int64_t, 3>& shape, std::array<double, 3>& spacing) {
  const auto& sh = j.at("shape");
  const auto& sp = j.at("spacing");
  if (sh.size() != 3 || sp.size() != 3) throw std::runtime_error("sidecar: shape/spacing must have 3 entries");
  for (int i = 0; i < 3; ++i) {
    shape[static_cast<size_t>(i)] = sh[static_cast<size_t>(i)].get<int64_t>();
    spacing[static_cast<size_t>(i)] = sp[static_cast<size_t>(i)].get<double>();
    if (shape[static_cast<size_t>(i)] < 1) throw std::runtime_error("sidecar: dimensions must be >= 1");
    if (!(spacing[static_cast<size_t>(i)] > 0.0)) throw std::runtime_error("sidecar: spacing must be > 0");
  }
}

template <class T>
std::vector<T> read_raw(const std::string& path, int64_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<int64_t>(in.tellg());
  in.seekg(0);
  if (bytes != expected * static_cast<int64_t>(sizeof(T)))
    throw std::runtime_error(path + ": file holds " + std::to_string(bytes / static_cast<int64_t>(sizeof(T))) +
                             " values but header declares " + std::to_string(expected));
  std::vector<T> out(static_cast<size_t>(expected));
  in.read(reinterpret_cast<char*>(out.data()), bytes);
  if (!in) throw std::runtime_error("short read on " + path);
  return out;
}

std::string strip_suffix(const std::string& s, const std::string& suf) {
  return s.substr(0, s.size() - suf.size());
}

}  // namespace

Volume load_volume(const std::string& path) {
  if (ends_with(path, ".nii") || ends_with(path, ".nii.gz")) return nifti_load(path);
  std::string base = path;
  if (ends_with(base, ".f32")) base = strip_suffix(base, ".f32");
  else if (ends_with(base, ".json")) base = strip_suffix(base, ".json");
  const std::string raw_path = base + ".f32";
  const std::string sidecar_path = base + ".json";
  const json j = read_json_file(sidecar_path);
  Volume v;
  parse_sidecar(j, v.shape, v.spacing);
  v.modality = modality_from_string(j.value("modality", std::string("SYNTH")));
  v.data = read_raw<float>(raw_path, v.numel());
  for (float f : v.data)
    if (!std::isfinite(f)) throw std::runtime_error(raw_path + ": non-finite voxel value");
  return v;
}

void save_volume(const Volume& v, const std::string& base) {
  if (v.numel() != static_cast<int64_t>(v.data.size()))
    throw std::invalid_argument("save_volume: shape/data mismatch");
  json j;
  j["shape"] = {v.shape[0], v.shape[1], v.shape[2]};
  j["spacing"] = {v.spacing[0], v.spacing[1], v.spacing[2]};
  j["modality"] = to_string(v.modality);
  std::ofstream side(base + ".json");
  side << j.dump(2) << "\n";
  std::ofstream raw(base + ".f32", std::ios::binary);
  raw.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!raw) throw std::runtime_error("write failed: " + base + ".f32");
}

LabelMap load_labels(const std::string& path) {
  std::string base = path;
  if (ends_with(base, ".labels.u16")) base = strip_suffix(base, ".labels.u16");
  else if (ends_with(base, ".labels.json")) base = strip_suffix(base, ".labels.json");
  const json j = read_json_file(base + ".labels.json");
  LabelMap l;
  parse_sidecar(j, l.shape, l.spacing);
  l.num_classes = j.at("num_classes").get<int>();
  if (l.num_classes < 1) throw std::runtime_error("labels: num_classes must be >= 1");
  l.labels = read_raw<uint16_t>(base + ".labels.u16", l.numel());
  for (uint16_t lab : l.labels)
    if (lab >= l.num_classes) throw std::runtime_error("labels: id >= num_classes");
  return l;
}

void save_labels(const LabelMap& l, const std::string& base) {
  if (l.numel() != static_cast<int64_t>(l.labels.size()))
    throw std::invalid_argument("save_labels: shape/data mismatch");
  json j;
  j["shape"] = {l.shape[0], l.shape[1], l.shape[2]};
  j["spacing"] = {l.spacing[0], l.spacing[1], l.spacing[2]};
  j["num_classes"] = l.num_classes;
  std::ofstream side(base + ".labels.json");
  side << j.dump(2) << "\n";
  std::ofstream raw(base + ".labels.u16", std::ios::binary);
  raw.write(reinterpret_cast<const char*>(l.labels.data()),
            static_cast<std::streamsize>(l.labels.size() * sizeof(uint16_t)));
  if (!raw) throw std::runtime_error("write failed: " + base + ".labels.u16");
}

Volume normalize_intensity(const Volume& v, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("normalize_intensity: lo must be < hi");
  Volume out = v;
  const double inv = 1.0 / (hi - lo);
  for (auto& f : out.data) {
    const double t = (static_cast<double>(f) - lo) * inv;
    f = static_cast<float>(std::clamp(t, 0.0, 1.0));
  }
  return out;
}

Volume normalize_default(const Volume& v) {
  if (v.modality == Modality::CT) return normalize_intensity(v, -1000.0, 1000.0);
  // (p1, p99) percentiles, linear-interpolated on the sorted values.
  std::vector<float> sorted = v.data;
  std::sort(sorted.begin(), sorted.end());
  auto pct = [&](double p) {
    const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= sorted.size()) return static_cast<double>(sorted.back());
    return (1.0 - frac) * sorted[i] + frac * sorted[i + 1];
  };
  double lo = pct(1.0), hi = pct(99.0);
  if (!(lo < hi)) {  // constant volume; any window containing it works
    lo = lo - 0.5;
    hi = hi + 0.5;
  }
  return normalize_intensity(v, lo, hi);
}

Volume resample(const Volume& v, std::array<double, 3> target) {
  for (double t : target)
    if (!(t > 0.0)) throw std::invalid_argument("resample: target spacing must be > 0");
  if (target == v.spacing) return v;  // exact identity
  Volume out;
  out.modality = v.modality;
  out.spacing = target;
  for (int a = 0; a < 3; ++a) {
    const auto ai = static_cast<size_t>(a);
    out.shape[ai] = static_cast<int64_t>(
        std::llround(static_cast<double>(v.shape[ai]) * v.spacing[ai] / target[ai]));
    if (out.shape[ai] < 1)
      throw std::invalid_argument("resample: degenerate output shape on axis " + std::to_string(a));
  }
  out.data.assign(static_cast<size_t>(out.numel()), 0.0f);
  const double sz = v.spacing[0] / target[0], sy = v.spacing[1] / target[1],
               sx = v.spacing[2] / target[2];
  for (int64_t z = 0; z < out.shape[0]; ++z) {
    const double fz = static_cast<double>(z) / sz;
    int64_t z0 = static_cast<int64_t>(std::floor(fz));
    double wz = fz - static_cast<double>(z0);
    z0 = std::clamp<int64_t>(z0, 0, v.shape[0] - 1);
    const int64_t z1 = std::min(z0 + 1, v.shape[0] - 1);
    for (int64_t y = 0; y < out.shape[1]; ++y) {
      const double fy = static_cast<double>(y) / sy;
      int64_t y0 = static_cast<int64_t>(std::floor(fy));
      double wy = fy - static_cast<double>(y0);
      y0 = std::clamp<int64_t>(y0, 0, v.shape[1] - 1);
      const int64_t y1 = std::min(y0 + 1, v.shape[1] - 1);
      for (int64_t x = 0; x < out.shape[2]; ++x) {
        const double fx = static_cast<double>(x) / sx;
        int64_t x0 = static_cast<int64_t>(std::floor(fx));
        double wx = fx - static_cast<double>(x0);
        x0 = std::clamp<int64_t>(x0, 0, v.shape[2] - 1);
        const int64_t x1 = std::min(x0 + 1, v.shape[2] - 1);
        const double c000 = v.at(z0, y0, x0), c001 = v.at(z0, y0, x1);
        const double c010 = v.at(z0, y1, x0), c011 = v.at(z0, y1, x1);
        const double c100 = v.at(z1, y0, x0), c101 = v.at(z1, y0, x1);
        const double c110 = v.at(z1, y1, x0), c111 = v.at(z1, y1, x1);
        const double c00 = c000 * (1 - wx) + c001 * wx;
        const double c01 = c010 * (1 - wx) + c011 * wx;
        const double c10 = c100 * (1 - wx) + c101 * wx;
        const double c11 = c110 * (1 - wx) + c111 * wx;
        const double c0 = c00 * (1 - wy) + c01 * wy;
        const double c1 = c10 * (1 - wy) + c11 * wy;
        out.at(z, y, x) = static_cast<float>(c0 * (1 - wz) + c1 * wz);
      }
    }
  }
  return out;
}

std::vector<std::string> list_volumes(const std::string& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string p = e.path().string();
    if (ends_with(p, ".f32")) out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace smit
