// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "smit/rng.hpp"
#include "smit/volume.hpp"

namespace smit {

namespace {

struct Blob {
  double cz, cy, cx;  // center (voxels)
  double rz, ry, rx;  // semi-axes (voxels)
  double mean;        // intensity inside
};

bool overlaps(const Blob& a, const Blob& b) {
  // Conservative test on bounding spheres of the ellipsoids.
  const double ra = std::max({a.rz, a.ry, a.rx});
  const double rb = std::max({b.rz, b.ry, b.rx});
  const double dz = a.cz - b.cz, dy = a.cy - b.cy, dx = a.cx - b.cx;
  return std::sqrt(dz * dz + dy * dy + dx * dx) < ra + rb + 1.0;
}

}  // namespace

std::pair<Volume, LabelMap> generate_phantom(const PhantomSpec& spec) {
  if (spec.num_blobs < 1) throw std::invalid_argument("phantom: num_blobs must be >= 1");
  if (spec.noise_std < 0.0) throw std::invalid_argument("phantom: noise_std must be >= 0");
  for (int64_t d : spec.size)
    if (d < 8) throw std::invalid_argument("phantom: each dimension must be >= 8");

  const double background = 0.10;
  const double lo_mean = 0.35, hi_mean = 0.95;
  // Blob means spread evenly across [lo,hi]; pairwise separation must stay
  // >= 2*noise_std (and so must the gap to background).
  const int nb = spec.num_blobs;
  const double sep = nb > 1 ? (hi_mean - lo_mean) / static_cast<double>(nb - 1) : hi_mean - lo_mean;
  if (2.0 * spec.noise_std > sep || 2.0 * spec.noise_std > lo_mean - background)
    throw std::invalid_argument("phantom: noise_std too large for separated blob intensities");

  Rng rng(derive_seed(spec.seed, "phantom"));
  const auto [D, H, W] = spec.size;

  std::vector<Blob> blobs;
  const double min_dim = static_cast<double>(std::min({D, H, W}));
  for (int k = 0; k < nb; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      Blob b;
      b.rz = rng.uniform(0.11, 0.22) * static_cast<double>(D);
      b.ry = rng.uniform(0.11, 0.22) * static_cast<double>(H);
      b.rx = rng.uniform(0.11, 0.22) * static_cast<double>(W);
      const double rmax = std::max({b.rz, b.ry, b.rx});
      if (2.0 * rmax + 4.0 > min_dim) continue;
      b.cz = rng.uniform(b.rz + 1.0, static_cast<double>(D) - b.rz - 1.0);
      b.cy = rng.uniform(b.ry + 1.0, static_cast<double>(H) - b.ry - 1.0);
      b.cx = rng.uniform(b.rx + 1.0, static_cast<double>(W) - b.rx - 1.0);
      b.mean = lo_mean + sep * static_cast<double>(k);
      bool ok = true;
      for (const auto& other : blobs) ok = ok && !overlaps(b, other);
      if (ok) {
        blobs.push_back(b);
        placed = true;
      }
    }
    if (!placed)
      throw std::runtime_error("phantom: could not place " + std::to_string(nb) +
                               " non-overlapping blobs after bounded retries");
  }

  Volume vol;
  vol.shape = spec.size;
  vol.modality = Modality::SYNTH;
  vol.data.assign(static_cast<size_t>(vol.numel()), static_cast<float>(background));
  LabelMap lm;
  lm.shape = spec.size;
  lm.spacing = vol.spacing;
  lm.num_classes = nb + 1;
  lm.labels.assign(static_cast<size_t>(lm.numel()), 0);

  for (int k = 0; k < nb; ++k) {
    const Blob& b = blobs[static_cast<size_t>(k)];
    const int64_t z0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.cz - b.rz)));
    const int64_t z1 = std::min<int64_t>(D - 1, static_cast<int64_t>(std::ceil(b.cz + b.rz)));
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.cy - b.ry)));
    const int64_t y1 = std::min<int64_t>(H - 1, static_cast<int64_t>(std::ceil(b.cy + b.ry)));
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.cx - b.rx)));
    const int64_t x1 = std::min<int64_t>(W - 1, static_cast<int64_t>(std::ceil(b.cx + b.rx)));
    for (int64_t z = z0; z <= z1; ++z)
      for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
          const double ez = (static_cast<double>(z) - b.cz) / b.rz;
          const double ey = (static_cast<double>(y) - b.cy) / b.ry;
          const double ex = (static_cast<double>(x) - b.cx) / b.rx;
          if (ez * ez + ey * ey + ex * ex <= 1.0) {
            vol.at(z, y, x) = static_cast<float>(b.mean);
            lm.labels[static_cast<size_t>((z * H + y) * W + x)] = static_cast<uint16_t>(k + 1);
          }
        }
  }

  if (spec.bias_field) {
    // Smooth multiplicative low-order polynomial field around 1.0.
    Rng brng(derive_seed(spec.seed, "bias"));
    double a[9];
    for (auto& c : a) c = brng.uniform(-0.15, 0.15);
    for (int64_t z = 0; z < D; ++z) {
      const double uz = 2.0 * static_cast<double>(z) / static_cast<double>(D - 1) - 1.0;
      for (int64_t y = 0; y < H; ++y) {
        const double uy = 2.0 * static_cast<double>(y) / static_cast<double>(H - 1) - 1.0;
        for (int64_t x = 0; x < W; ++x) {
          const double ux = 2.0 * static_cast<double>(x) / static_cast<double>(W - 1) - 1.0;
          const double field = 1.0 + a[0] * uz + a[1] * uy + a[2] * ux + a[3] * uz * uy +
                               a[4] * uz * ux + a[5] * uy * ux + a[6] * uz * uz + a[7] * uy * uy +
                               a[8] * ux * ux;
          auto& v = vol.data[static_cast<size_t>((z * H + y) * W + x)];
          v = static_cast<float>(static_cast<double>(v) * field);
        }
      }
    }
  }

  if (spec.noise_std > 0.0) {
    Rng nrng(derive_seed(spec.seed, "noise"));
    for (auto& v : vol.data) v = static_cast<float>(static_cast<double>(v) + nrng.normal(0.0, spec.noise_std));
  }

  if (spec.bias_field || spec.noise_std > 0.0)
    for (auto& v : vol.data) v = std::clamp(v, 0.0f, 1.0f);

  return {std::move(vol), std::move(lm)};
}

}  // namespace smit
