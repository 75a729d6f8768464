// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "smit/volume.hpp"

namespace smit {

/// One cubic crop of a source volume, values in [0,1].
struct View {
  int64_t size = 0;                    // S, cubic
  std::array<int64_t, 3> origin{0, 0, 0};  // crop offset in the (possibly padded) source
  std::vector<float> data;             // S^3, (z,y,x) row-major

  double at(int64_t z, int64_t y, int64_t x) const {
    return data[static_cast<size_t>((z * size + y) * size + x)];
  }
};

struct ViewPair {
  View u, v;
  uint64_t rng_seed = 0;
};

struct AugmentConfig {
  int64_t view_size = 32;
  double flip_prob = 0.0;    // per-axis flip probability, applied per view
  double jitter = 0.0;       // additive intensity jitter amplitude, clipped to [0,1]
  std::optional<std::array<int64_t, 3>> fixed_origin;  // pin both crops (tests/ablation)
};

/// Two independently cropped (and optionally flipped/jittered) views of one
/// volume. Pure function of (volume, cfg, seed). Volumes smaller than the view
/// are zero-padded symmetrically.
ViewPair sample_two_views(const Volume& vol, const AugmentConfig& cfg, uint64_t seed);

/// Same crop logic for a labeled pair (used by fine-tuning); no jitter on labels.
struct LabeledCrop {
  View image;
  std::vector<uint16_t> labels;
};
LabeledCrop sample_labeled_crop(const Volume& vol, const LabelMap& labels, const AugmentConfig& cfg,
                                uint64_t seed);

/// Central crop (deterministic), zero-padded if needed.
View central_crop(const Volume& vol, int64_t view_size);

/// Crop at an explicit origin given in the zero-padded frame (the volume sits
/// centred in a box of max(shape, view_size) per axis).
View crop_at(const Volume& vol, int64_t view_size, std::array<int64_t, 3> origin);

/// Padding offset of the volume inside its padded frame for a given view size.
std::array<int64_t, 3> padding_low(const std::array<int64_t, 3>& shape, int64_t view_size);

}  // namespace smit
