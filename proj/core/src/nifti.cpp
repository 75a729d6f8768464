// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal NIfTI-1 reader (little-endian files only), enough to ingest real
// scans; everything downstream goes through the native format.
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <zlib.h>

#include "smit/volume.hpp"

namespace smit {

namespace {

std::vector<char> read_all_maybe_gz(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");  // transparently handles plain files too
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<char> out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool bad = n < 0;
  gzclose(f);
  if (bad) throw std::runtime_error("decompression failed: " + path);
  return out;
}

template <class T>
T read_at(const std::vector<char>& b, size_t off) {
  T v;
  std::memcpy(&v, b.data() + off, sizeof(T));
  return v;
}

}  // namespace

Volume nifti_load(const std::string& path) {
  const std::vector<char> raw = read_all_maybe_gz(path);
  if (raw.size() < 352) throw std::runtime_error(path + ": truncated NIfTI header");
  const auto sizeof_hdr = read_at<int32_t>(raw, 0);
  if (sizeof_hdr != 348) throw std::runtime_error(path + ": not a little-endian NIfTI-1 file");
  char magic[4];
  std::memcpy(magic, raw.data() + 344, 4);
  if (std::strncmp(magic, "n+1", 3) != 0 && std::strncmp(magic, "ni1", 3) != 0)
    throw std::runtime_error(path + ": bad NIfTI magic");

  int16_t dim[8];
  std::memcpy(dim, raw.data() + 40, sizeof(dim));
  if (dim[0] < 3) throw std::runtime_error(path + ": need a 3-D image");
  const int64_t nx = dim[1], ny = dim[2], nz = dim[3];
  for (int d = 4; d <= dim[0]; ++d)
    if (dim[d] > 1) throw std::runtime_error(path + ": >3-D images not supported");

  const auto datatype = read_at<int16_t>(raw, 70);
  float pixdim[8];
  std::memcpy(pixdim, raw.data() + 76, sizeof(pixdim));
  auto vox_offset = static_cast<size_t>(read_at<float>(raw, 108));
  if (vox_offset < 348) vox_offset = 352;
  float scl_slope = read_at<float>(raw, 112);
  const float scl_inter = read_at<float>(raw, 116);
  if (scl_slope == 0.0f) scl_slope = 1.0f;

  const int64_t n = nx * ny * nz;
  Volume v;
  v.shape = {nz, ny, nx};
  v.spacing = {pixdim[3], pixdim[2], pixdim[1]};
  for (auto& s : v.spacing)
    if (!(s > 0.0)) s = 1.0;
  v.data.resize(static_cast<size_t>(n));

  auto need = [&](size_t elem_size) {
    if (raw.size() < vox_offset + static_cast<size_t>(n) * elem_size)
      throw std::runtime_error(path + ": voxel data shorter than header shape");
  };
  const char* src = raw.data() + vox_offset;
  switch (datatype) {
    case 2: {  // uint8
      need(1);
      for (int64_t i = 0; i < n; ++i)
        v.data[static_cast<size_t>(i)] = static_cast<float>(static_cast<unsigned char>(src[i]));
      break;
    }
    case 4: {  // int16
      need(2);
      for (int64_t i = 0; i < n; ++i) {
        int16_t t;
        std::memcpy(&t, src + i * 2, 2);
        v.data[static_cast<size_t>(i)] = static_cast<float>(t);
      }
      break;
    }
    case 8: {  // int32
      need(4);
      for (int64_t i = 0; i < n; ++i) {
        int32_t t;
        std::memcpy(&t, src + i * 4, 4);
        v.data[static_cast<size_t>(i)] = static_cast<float>(t);
      }
      break;
    }
    case 16: {  // float32
      need(4);
      std::memcpy(v.data.data(), src, static_cast<size_t>(n) * 4);
      break;
    }
    case 64: {  // float64
      need(8);
      for (int64_t i = 0; i < n; ++i) {
        double t;
        std::memcpy(&t, src + i * 8, 8);
        v.data[static_cast<size_t>(i)] = static_cast<float>(t);
      }
      break;
    }
    case 512: {  // uint16
      need(2);
      for (int64_t i = 0; i < n; ++i) {
        uint16_t t;
        std::memcpy(&t, src + i * 2, 2);
        v.data[static_cast<size_t>(i)] = static_cast<float>(t);
      }
      break;
    }
    default:
      throw std::runtime_error(path + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  if (scl_slope != 1.0f || scl_inter != 0.0f)
    for (auto& f : v.data) f = f * scl_slope + scl_inter;
  float mn = v.data.empty() ? 0.0f : v.data[0];
  for (float f : v.data) {
    if (!std::isfinite(f)) throw std::runtime_error(path + ": non-finite voxel value");
    mn = std::min(mn, f);
  }
  v.modality = mn < -200.0f ? Modality::CT : Modality::MR;  // HU heuristic
  return v;
}

}  // namespace smit
