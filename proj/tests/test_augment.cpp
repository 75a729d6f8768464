// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "smit/augment.hpp"
#include "smit/rng.hpp"

using namespace smit;

namespace {
Volume make_volume(std::array<int64_t, 3> shape, uint64_t seed) {
  Volume v;
  v.shape = shape;
  v.data.resize(static_cast<size_t>(v.numel()));
  Rng rng(seed);
  for (auto& f : v.data) f = static_cast<float>(rng.uniform01());
  return v;
}
}  // namespace

TEST_CASE("volume exactly S^3 yields both views at origin 0") {
  Volume v = make_volume({16, 16, 16}, 1);
  AugmentConfig cfg;
  cfg.view_size = 16;
  ViewPair p = sample_two_views(v, cfg, 99);
  CHECK(p.u.origin == std::array<int64_t, 3>{0, 0, 0});
  CHECK(p.v.origin == std::array<int64_t, 3>{0, 0, 0});
  for (size_t i = 0; i < v.data.size(); ++i) {
    CHECK(p.u.data[i] == v.data[i]);
    CHECK(p.v.data[i] == v.data[i]);
  }
}

TEST_CASE("same (volume, seed) twice gives identical pairs") {
  Volume v = make_volume({24, 24, 24}, 2);
  AugmentConfig cfg;
  cfg.view_size = 16;
  cfg.flip_prob = 0.5;
  cfg.jitter = 0.1;
  ViewPair a = sample_two_views(v, cfg, 7);
  ViewPair b = sample_two_views(v, cfg, 7);
  CHECK(a.u.origin == b.u.origin);
  CHECK(a.v.origin == b.v.origin);
  CHECK(a.u.data == b.u.data);
  CHECK(a.v.data == b.v.data);
  ViewPair c = sample_two_views(v, cfg, 8);
  CHECK(a.u.data != c.u.data);  // different seed, almost surely different crop
}

TEST_CASE("crop origins stay within [0, dim - S] over many seeds") {
  Volume v = make_volume({128, 128, 128}, 3);
  AugmentConfig cfg;
  cfg.view_size = 96;
  bool hit_low = false, hit_high = false;
  for (uint64_t s = 0; s < 400; ++s) {
    ViewPair p = sample_two_views(v, cfg, s);
    for (const auto& view : {p.u, p.v})
      for (int a = 0; a < 3; ++a) {
        CHECK(view.origin[static_cast<size_t>(a)] >= 0);
        CHECK(view.origin[static_cast<size_t>(a)] <= 32);
        if (view.origin[static_cast<size_t>(a)] == 0) hit_low = true;
        if (view.origin[static_cast<size_t>(a)] == 32) hit_high = true;
      }
  }
  CHECK(hit_low);
  CHECK(hit_high);
}

TEST_CASE("views stay in [0,1] under jitter and flips") {
  Volume v = make_volume({20, 20, 20}, 4);
  AugmentConfig cfg;
  cfg.view_size = 16;
  cfg.flip_prob = 0.5;
  cfg.jitter = 0.3;
  for (uint64_t s = 0; s < 50; ++s) {
    ViewPair p = sample_two_views(v, cfg, s);
    for (const auto& view : {p.u, p.v})
      for (float f : view.data) {
        CHECK(f >= 0.0f);
        CHECK(f <= 1.0f);
      }
  }
}

TEST_CASE("disabling augmentation and fixing the origin makes u == v") {
  Volume v = make_volume({24, 24, 24}, 5);
  AugmentConfig cfg;
  cfg.view_size = 16;
  cfg.fixed_origin = std::array<int64_t, 3>{3, 5, 1};
  ViewPair p = sample_two_views(v, cfg, 123);
  CHECK(p.u.data == p.v.data);
  CHECK(p.u.origin == *cfg.fixed_origin);
}

TEST_CASE("small volumes are zero-padded symmetrically") {
  Volume v = make_volume({8, 8, 8}, 6);
  for (auto& f : v.data) f = 1.0f;
  AugmentConfig cfg;
  cfg.view_size = 16;
  ViewPair p = sample_two_views(v, cfg, 1);
  // padded frame is 16^3 with the volume centred at offset 4
  CHECK(p.u.at(0, 0, 0) == 0.0f);
  CHECK(p.u.at(4, 4, 4) == 1.0f);
  CHECK(p.u.at(11, 11, 11) == 1.0f);
  CHECK(p.u.at(12, 12, 12) == 0.0f);
}

TEST_CASE("labeled crops keep image and labels aligned") {
  Volume v = make_volume({20, 20, 20}, 7);
  LabelMap l;
  l.shape = v.shape;
  l.num_classes = 2;
  l.labels.assign(static_cast<size_t>(v.numel()), 0);
  // mark voxels > 0.5
  for (size_t i = 0; i < v.data.size(); ++i) l.labels[i] = v.data[i] > 0.5f ? 1 : 0;
  AugmentConfig cfg;
  cfg.view_size = 16;
  auto crop = sample_labeled_crop(v, l, cfg, 77);
  for (size_t i = 0; i < crop.labels.size(); ++i)
    CHECK(crop.labels[i] == (crop.image.data[i] > 0.5f ? 1 : 0));
}
