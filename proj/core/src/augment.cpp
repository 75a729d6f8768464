// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/augment.hpp"

#include <algorithm>
#include <stdexcept>

#include "smit/rng.hpp"

namespace smit {

namespace {

// Value at padded coordinate; the volume sits centred in the padded box.
template <class T, class Elem>
Elem padded_at(const T& vol, const Elem* data, std::array<int64_t, 3> pad_lo, int64_t z, int64_t y,
               int64_t x) {
  const int64_t sz = z - pad_lo[0], sy = y - pad_lo[1], sx = x - pad_lo[2];
  if (sz < 0 || sy < 0 || sx < 0 || sz >= vol.shape[0] || sy >= vol.shape[1] || sx >= vol.shape[2])
    return Elem{0};
  return data[static_cast<size_t>((sz * vol.shape[1] + sy) * vol.shape[2] + sx)];
}

std::array<int64_t, 3> pad_lo_for(const std::array<int64_t, 3>& shape, int64_t S) {
  std::array<int64_t, 3> lo{0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    const auto ai = static_cast<size_t>(a);
    if (shape[ai] < S) lo[ai] = (S - shape[ai]) / 2;
  }
  return lo;
}

std::array<int64_t, 3> padded_shape(const std::array<int64_t, 3>& shape, int64_t S) {
  std::array<int64_t, 3> out = shape;
  for (auto& d : out) d = std::max(d, S);
  return out;
}

View crop_view(const Volume& vol, int64_t S, std::array<int64_t, 3> origin) {
  const auto lo = pad_lo_for(vol.shape, S);
  View view;
  view.size = S;
  view.origin = origin;
  view.data.resize(static_cast<size_t>(S * S * S));
  for (int64_t z = 0; z < S; ++z)
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x)
        view.data[static_cast<size_t>((z * S + y) * S + x)] =
            padded_at(vol, vol.data.data(), lo, origin[0] + z, origin[1] + y, origin[2] + x);
  return view;
}

std::array<int64_t, 3> sample_origin(const std::array<int64_t, 3>& pshape, int64_t S, Rng& rng) {
  std::array<int64_t, 3> o{0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    const auto ai = static_cast<size_t>(a);
    const int64_t span = pshape[ai] - S;
    o[ai] = span > 0 ? rng.range(0, span) : 0;
  }
  return o;
}

void apply_view_augment(View& v, double flip_prob, double jitter, Rng& rng) {
  bool flips[3] = {false, false, false};
  for (auto& f : flips) f = flip_prob > 0.0 && rng.uniform01() < flip_prob;
  if (flips[0] || flips[1] || flips[2]) {
    const int64_t S = v.size;
    std::vector<float> out(v.data.size());
    for (int64_t z = 0; z < S; ++z)
      for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x) {
          const int64_t zz = flips[0] ? S - 1 - z : z;
          const int64_t yy = flips[1] ? S - 1 - y : y;
          const int64_t xx = flips[2] ? S - 1 - x : x;
          out[static_cast<size_t>((z * S + y) * S + x)] =
              v.data[static_cast<size_t>((zz * S + yy) * S + xx)];
        }
    v.data = std::move(out);
  }
  if (jitter > 0.0) {
    const auto delta = static_cast<float>(rng.uniform(-jitter, jitter));
    for (auto& f : v.data) f = std::clamp(f + delta, 0.0f, 1.0f);
  }
}

}  // namespace

ViewPair sample_two_views(const Volume& vol, const AugmentConfig& cfg, uint64_t seed) {
  const int64_t S = cfg.view_size;
  if (S < 1) throw std::invalid_argument("sample_two_views: view_size must be >= 1");
  const auto pshape = padded_shape(vol.shape, S);
  ViewPair pair;
  pair.rng_seed = seed;
  Rng rng_u(derive_seed(seed, "view", 0));
  Rng rng_v(derive_seed(seed, "view", 1));
  const auto ou = cfg.fixed_origin ? *cfg.fixed_origin : sample_origin(pshape, S, rng_u);
  const auto ov = cfg.fixed_origin ? *cfg.fixed_origin : sample_origin(pshape, S, rng_v);
  pair.u = crop_view(vol, S, ou);
  pair.v = crop_view(vol, S, ov);
  apply_view_augment(pair.u, cfg.flip_prob, cfg.jitter, rng_u);
  apply_view_augment(pair.v, cfg.flip_prob, cfg.jitter, rng_v);
  return pair;
}

LabeledCrop sample_labeled_crop(const Volume& vol, const LabelMap& labels, const AugmentConfig& cfg,
                                uint64_t seed) {
  if (vol.shape != labels.shape) throw std::invalid_argument("labeled crop: shape mismatch");
  const int64_t S = cfg.view_size;
  const auto pshape = padded_shape(vol.shape, S);
  Rng rng(derive_seed(seed, "labeled_crop"));
  const auto o = cfg.fixed_origin ? *cfg.fixed_origin : sample_origin(pshape, S, rng);
  LabeledCrop out;
  out.image = crop_view(vol, S, o);
  out.labels.resize(static_cast<size_t>(S * S * S));
  const auto lo = pad_lo_for(labels.shape, S);
  for (int64_t z = 0; z < S; ++z)
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x)
        out.labels[static_cast<size_t>((z * S + y) * S + x)] =
            padded_at(labels, labels.labels.data(), lo, o[0] + z, o[1] + y, o[2] + x);
  return out;
}

View central_crop(const Volume& vol, int64_t S) {
  const auto pshape = padded_shape(vol.shape, S);
  std::array<int64_t, 3> o{};
  for (int a = 0; a < 3; ++a) o[static_cast<size_t>(a)] = (pshape[static_cast<size_t>(a)] - S) / 2;
  return crop_view(vol, S, o);
}

View crop_at(const Volume& vol, int64_t S, std::array<int64_t, 3> origin) {
  return crop_view(vol, S, origin);
}

std::array<int64_t, 3> padding_low(const std::array<int64_t, 3>& shape, int64_t S) {
  return pad_lo_for(shape, S);
}

}  // namespace smit
