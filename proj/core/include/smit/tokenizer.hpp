// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "smit/augment.hpp"
#include "smit/graph.hpp"
#include "smit/tensor.hpp"

namespace smit {

/// Non-overlapping P^3 patches of a cubic view, (z,y,x) raster order.
/// Output shape (G^3, P^3) with G = S / P. Lossless.
Tensor patchify(const View& view, int64_t patch_size);
Tensor patchify(const std::vector<float>& voxels, int64_t S, int64_t patch_size);

/// Inverse of patchify: (G^3, P^3) -> S^3 voxels.
std::vector<double> unpatchify(const Tensor& patches, int64_t S, int64_t patch_size);

/// Exact-count binary mask: popcount == round(ratio * n), positions uniform
/// without replacement, deterministic per seed.
struct MaskVector {
  std::vector<uint8_t> m;
  double ratio = 0.0;
  int64_t count() const;
};
MaskVector sample_mask(int64_t n_mask, double ratio, uint64_t seed);

/// Row mask on the fine token grid obtained by broadcasting a coarse mask-grid
/// vector blockwise: each mask bit governs a (fine/coarse)^3 block of tokens.
std::vector<uint8_t> broadcast_mask(const MaskVector& m, int64_t coarse_grid, int64_t fine_grid);

/// Replace rows of the patch-embedding sequence with the learnable mask token
/// wherever the (broadcast) mask is set. Positional encodings are added after.
Var apply_mask(Var embeddings, const std::vector<uint8_t>& fine_row_mask, Var mask_token);

}  // namespace smit
