// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "smit/rng.hpp"
#include "smit/volume.hpp"

using namespace smit;
namespace fs = std::filesystem;

namespace {
std::string tmp_dir() {
  auto d = fs::temp_directory_path() / "smit_volio_test";
  fs::create_directories(d);
  return d.string();
}
}  // namespace

TEST_CASE("native round-trip is bit-exact") {
  Volume v;
  v.shape = {4, 4, 4};
  v.spacing = {1.5, 1.5, 2.0};
  v.modality = Modality::CT;
  v.data.resize(64);
  Rng rng(7);
  for (auto& f : v.data) f = static_cast<float>(rng.uniform(-1000.0, 3000.0));
  const std::string base = tmp_dir() + "/rt";
  save_volume(v, base);
  Volume r = load_volume(base + ".f32");
  CHECK(r.shape == v.shape);
  CHECK(r.spacing == v.spacing);
  CHECK(r.modality == Modality::CT);
  for (size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == v.data[i]);
}

TEST_CASE("all-zero 4x4x4 volume loads as zeros") {
  Volume v;
  v.shape = {4, 4, 4};
  v.data.assign(64, 0.0f);
  const std::string base = tmp_dir() + "/zeros";
  save_volume(v, base);
  Volume r = load_volume(base + ".f32");
  CHECK(r.shape == std::array<int64_t, 3>{4, 4, 4});
  for (float f : r.data) CHECK(f == 0.0f);
}

TEST_CASE("shape/data mismatch is rejected") {
  const std::string base = tmp_dir() + "/bad";
  {
    std::ofstream side(base + ".json");
    side << R"({"shape":[8,8,8],"spacing":[1,1,1],"modality":"SYNTH"})";
    std::ofstream raw(base + ".f32", std::ios::binary);
    std::vector<float> vals(500, 1.0f);  // header says 512
    raw.write(reinterpret_cast<const char*>(vals.data()), 500 * sizeof(float));
  }
  CHECK_THROWS(load_volume(base + ".f32"));
}

TEST_CASE("non-finite voxels are rejected with a diagnostic") {
  Volume v;
  v.shape = {2, 2, 2};
  v.data.assign(8, 1.0f);
  v.data[3] = std::numeric_limits<float>::quiet_NaN();
  const std::string base = tmp_dir() + "/nan";
  save_volume(v, base);
  CHECK_THROWS_WITH_AS(load_volume(base + ".f32"), doctest::Contains("non-finite"),
                       std::runtime_error);
}

TEST_CASE("label map round-trip and validation") {
  LabelMap l;
  l.shape = {3, 3, 3};
  l.num_classes = 4;
  l.labels.assign(27, 0);
  l.labels[5] = 3;
  const std::string base = tmp_dir() + "/lab";
  save_labels(l, base);
  LabelMap r = load_labels(base + ".labels.u16");
  CHECK(r.num_classes == 4);
  CHECK(r.labels == l.labels);
}

TEST_CASE("normalize_intensity maps the window affinely and clips") {
  Volume v;
  v.shape = {1, 1, 3};
  v.data = {-1000.0f, 40.0f, 3000.0f};
  Volume n = normalize_intensity(v, -1000.0, 1000.0);
  CHECK(n.data[0] == doctest::Approx(0.0));
  CHECK(n.data[1] == doctest::Approx(0.52));
  CHECK(n.data[2] == doctest::Approx(1.0));

  Volume mid;
  mid.shape = {1, 1, 2};
  mid.data = {0.5f, 0.5f};
  Volume nm = normalize_intensity(mid, 0.0, 1.0);
  CHECK(nm.data[0] == doctest::Approx(0.5));

  CHECK_THROWS(normalize_intensity(v, 5.0, 5.0));
  CHECK_THROWS(normalize_intensity(v, 5.0, 1.0));
}

TEST_CASE("resample identity, shape arithmetic, constants") {
  Volume v;
  v.shape = {10, 10, 10};
  v.spacing = {1.0, 1.0, 1.0};
  v.data.resize(1000);
  Rng rng(3);
  for (auto& f : v.data) f = static_cast<float>(rng.uniform01());

  Volume same = resample(v, {1.0, 1.0, 1.0});
  CHECK(same.data == v.data);

  Volume half = resample(v, {2.0, 2.0, 2.0});
  CHECK(half.shape == std::array<int64_t, 3>{5, 5, 5});
  CHECK(half.spacing == std::array<double, 3>{2.0, 2.0, 2.0});

  Volume c;
  c.shape = {6, 6, 6};
  c.spacing = {1.0, 1.0, 1.0};
  c.data.assign(216, 0.625f);
  Volume cr = resample(c, {0.8, 1.7, 2.0});
  for (float f : cr.data) CHECK(f == doctest::Approx(0.625).epsilon(1e-6));

  CHECK_THROWS(resample(v, {0.0, 1.0, 1.0}));
  CHECK_THROWS(resample(v, {1e9, 1e9, 1e9}));  // degenerate output shape
}

TEST_CASE("phantom determinism, labels, and noiseless means") {
  PhantomSpec spec;
  spec.size = {32, 32, 32};
  spec.num_blobs = 3;
  spec.seed = 42;
  spec.noise_std = 0.0;
  spec.bias_field = false;

  auto [v1, l1] = generate_phantom(spec);
  auto [v2, l2] = generate_phantom(spec);
  CHECK(v1.data == v2.data);
  CHECK(l1.labels == l2.labels);

  CHECK(l1.num_classes == 4);
  std::array<bool, 4> seen{false, false, false, false};
  for (uint16_t lab : l1.labels) {
    REQUIRE(lab < 4);
    seen[lab] = true;
  }
  for (bool s : seen) CHECK(s);

  // noiseless: inside each blob the intensity is exactly the blob mean
  std::array<float, 4> mean_of{-1.0f, -1.0f, -1.0f, -1.0f};
  for (size_t i = 0; i < l1.labels.size(); ++i) {
    const uint16_t lab = l1.labels[i];
    if (lab == 0) continue;
    if (mean_of[lab] < 0.0f) mean_of[lab] = v1.data[i];
    CHECK(v1.data[i] == mean_of[lab]);
  }
}

TEST_CASE("phantom with noise and bias stays in range and is seeded") {
  PhantomSpec spec;
  spec.size = {24, 24, 24};
  spec.num_blobs = 2;
  spec.seed = 9;
  spec.noise_std = 0.05;
  spec.bias_field = true;
  auto [v, l] = generate_phantom(spec);
  for (float f : v.data) {
    CHECK(f >= 0.0f);
    CHECK(f <= 1.0f);
  }
  auto [v2, l2] = generate_phantom(spec);
  CHECK(v.data == v2.data);
}

TEST_CASE("phantom rejects impossible placements and bad specs") {
  PhantomSpec spec;
  spec.size = {12, 12, 12};
  spec.num_blobs = 40;  // cannot fit without overlap
  spec.seed = 1;
  CHECK_THROWS(generate_phantom(spec));

  PhantomSpec noisy;
  noisy.num_blobs = 5;
  noisy.noise_std = 0.4;  // separation constraint impossible
  CHECK_THROWS(generate_phantom(noisy));
}

TEST_CASE("default normalization: CT window and SYNTH percentiles") {
  Volume ct;
  ct.shape = {1, 1, 4};
  ct.modality = Modality::CT;
  ct.data = {-2000.0f, -1000.0f, 0.0f, 1000.0f};
  Volume n = normalize_default(ct);
  CHECK(n.data[0] == 0.0f);
  CHECK(n.data[1] == 0.0f);
  CHECK(n.data[2] == doctest::Approx(0.5));
  CHECK(n.data[3] == 1.0f);

  Volume syn;
  syn.shape = {4, 4, 4};
  syn.modality = Modality::SYNTH;
  syn.data.resize(64);
  Rng rng(11);
  for (auto& f : syn.data) f = static_cast<float>(rng.uniform(10.0, 20.0));
  Volume ns = normalize_default(syn);
  for (float f : ns.data) {
    CHECK(f >= 0.0f);
    CHECK(f <= 1.0f);
  }
}

TEST_CASE("nifti reader round-trips through the native pipeline") {
  // Build a tiny uncompressed NIfTI-1 file by hand.
  const std::string path = tmp_dir() + "/tiny.nii";
  std::vector<char> hdr(352, 0);
  auto put32 = [&](size_t off, int32_t v) { std::memcpy(hdr.data() + off, &v, 4); };
  auto put16 = [&](size_t off, int16_t v) { std::memcpy(hdr.data() + off, &v, 2); };
  auto putf = [&](size_t off, float v) { std::memcpy(hdr.data() + off, &v, 4); };
  put32(0, 348);
  int16_t dims[8] = {3, 3, 2, 2, 1, 1, 1, 1};
  std::memcpy(hdr.data() + 40, dims, sizeof(dims));
  put16(70, 16);  // float32
  put16(72, 32);
  putf(76 + 4, 1.0f);   // pixdim[1]
  putf(76 + 8, 2.0f);   // pixdim[2]
  putf(76 + 12, 3.0f);  // pixdim[3]
  putf(108, 352.0f);    // vox_offset
  std::memcpy(hdr.data() + 344, "n+1\0", 4);
  std::ofstream out(path, std::ios::binary);
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  std::vector<float> vox(12);
  for (size_t i = 0; i < vox.size(); ++i) vox[i] = static_cast<float>(i);
  out.write(reinterpret_cast<const char*>(vox.data()),
            static_cast<std::streamsize>(vox.size() * sizeof(float)));
  out.close();

  Volume v = load_volume(path);
  CHECK(v.shape == std::array<int64_t, 3>{2, 2, 3});  // (z,y,x) = (dim3,dim2,dim1)
  CHECK(v.spacing == std::array<double, 3>{3.0, 2.0, 1.0});
  CHECK(v.data[0] == 0.0f);
  CHECK(v.data[11] == 11.0f);
}
