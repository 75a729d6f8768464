// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/tokenizer.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "smit/rng.hpp"

namespace smit {

Tensor patchify(const std::vector<float>& voxels, int64_t S, int64_t P) {
  if (P < 1 || S % P != 0) throw std::invalid_argument("patchify: patch size must divide view size");
  if (static_cast<int64_t>(voxels.size()) != S * S * S)
    throw std::invalid_argument("patchify: voxel count mismatch");
  const int64_t G = S / P;
  Tensor out({G * G * G, P * P * P});
  for (int64_t gz = 0; gz < G; ++gz)
    for (int64_t gy = 0; gy < G; ++gy)
      for (int64_t gx = 0; gx < G; ++gx) {
        const int64_t row = (gz * G + gy) * G + gx;
        double* dst = out.data.data() + row * P * P * P;
        for (int64_t pz = 0; pz < P; ++pz)
          for (int64_t py = 0; py < P; ++py)
            for (int64_t px = 0; px < P; ++px) {
              const int64_t z = gz * P + pz, y = gy * P + py, x = gx * P + px;
              dst[(pz * P + py) * P + px] = voxels[static_cast<size_t>((z * S + y) * S + x)];
            }
      }
  return out;
}

Tensor patchify(const View& view, int64_t P) { return patchify(view.data, view.size, P); }

std::vector<double> unpatchify(const Tensor& patches, int64_t S, int64_t P) {
  const int64_t G = S / P;
  if (patches.numel() != S * S * S) throw std::invalid_argument("unpatchify: size mismatch");
  std::vector<double> out(static_cast<size_t>(S * S * S));
  for (int64_t gz = 0; gz < G; ++gz)
    for (int64_t gy = 0; gy < G; ++gy)
      for (int64_t gx = 0; gx < G; ++gx) {
        const int64_t row = (gz * G + gy) * G + gx;
        const double* src = patches.data.data() + row * P * P * P;
        for (int64_t pz = 0; pz < P; ++pz)
          for (int64_t py = 0; py < P; ++py)
            for (int64_t px = 0; px < P; ++px) {
              const int64_t z = gz * P + pz, y = gy * P + py, x = gx * P + px;
              out[static_cast<size_t>((z * S + y) * S + x)] = src[(pz * P + py) * P + px];
            }
      }
  return out;
}

int64_t MaskVector::count() const {
  int64_t n = 0;
  for (uint8_t b : m) n += b ? 1 : 0;
  return n;
}

MaskVector sample_mask(int64_t n_mask, double ratio, uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("sample_mask: ratio out of [0,1]");
  MaskVector out;
  out.ratio = ratio;
  out.m.assign(static_cast<size_t>(n_mask), 0);
  const auto k = static_cast<int64_t>(std::llround(ratio * static_cast<double>(n_mask)));
  Rng rng(derive_seed(seed, "mask"));
  for (int64_t idx : rng.choose_k(n_mask, k)) out.m[static_cast<size_t>(idx)] = 1;
  return out;
}

std::vector<uint8_t> broadcast_mask(const MaskVector& m, int64_t coarse, int64_t fine) {
  if (coarse < 1 || fine % coarse != 0)
    throw std::invalid_argument("broadcast_mask: fine grid must be a multiple of coarse grid");
  if (static_cast<int64_t>(m.m.size()) != coarse * coarse * coarse)
    throw std::invalid_argument("broadcast_mask: mask length mismatch");
  const int64_t b = fine / coarse;
  std::vector<uint8_t> out(static_cast<size_t>(fine * fine * fine));
  for (int64_t z = 0; z < fine; ++z)
    for (int64_t y = 0; y < fine; ++y)
      for (int64_t x = 0; x < fine; ++x) {
        const int64_t c = ((z / b) * coarse + (y / b)) * coarse + (x / b);
        out[static_cast<size_t>((z * fine + y) * fine + x)] = m.m[static_cast<size_t>(c)];
      }
  return out;
}

Var apply_mask(Var embeddings, const std::vector<uint8_t>& fine_row_mask, Var mask_token) {
  auto mask = std::make_shared<const std::vector<uint8_t>>(fine_row_mask);
  return rows_where(embeddings, mask, mask_token);
}

}  // namespace smit
