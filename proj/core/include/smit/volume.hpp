// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace smit {

enum class Modality { CT, MR, SYNTH };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

/// 3-D scalar field, (z,y,x) row-major, with voxel spacing in millimetres.
struct Volume {
  std::array<int64_t, 3> shape{0, 0, 0};  // (D,H,W) = (z,y,x)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Modality modality = Modality::SYNTH;
  std::vector<float> data;

  int64_t numel() const { return shape[0] * shape[1] * shape[2]; }
  float at(int64_t z, int64_t y, int64_t x) const {
    return data[static_cast<size_t>((z * shape[1] + y) * shape[2] + x)];
  }
  float& at(int64_t z, int64_t y, int64_t x) {
    return data[static_cast<size_t>((z * shape[1] + y) * shape[2] + x)];
  }
};

/// Integer class ids aligned voxel-for-voxel with a Volume. Label 0 is background.
struct LabelMap {
  std::array<int64_t, 3> shape{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  int num_classes = 0;
  std::vector<uint16_t> labels;

  int64_t numel() const { return shape[0] * shape[1] * shape[2]; }
  uint16_t at(int64_t z, int64_t y, int64_t x) const {
    return labels[static_cast<size_t>((z * shape[1] + y) * shape[2] + x)];
  }
};

struct PhantomSpec {
  std::array<int64_t, 3> size{48, 48, 48};
  int num_blobs = 3;
  uint64_t seed = 0;
  double noise_std = 0.0;
  bool bias_field = false;
};

// ---- native format ---------------------------------------------------------------------------
// `<name>.f32`: raw little-endian float32, (z,y,x) row-major, with sidecar `<name>.json`
// holding {"shape":[D,H,W],"spacing":[sz,sy,sx],"modality":"CT|MR|SYNTH"}.
// Label maps: `<name>.labels.u16` + `<name>.labels.json` (same schema plus "num_classes").
// `.nii` / `.nii.gz` paths are also accepted by load_volume.

Volume load_volume(const std::string& path);
void save_volume(const Volume& v, const std::string& base_path_no_ext);

LabelMap load_labels(const std::string& path);
void save_labels(const LabelMap& l, const std::string& base_path_no_ext);

/// Voxelwise clip((x - lo) / (hi - lo), 0, 1).
Volume normalize_intensity(const Volume& v, double lo, double hi);

/// Modality-default window: CT uses (-1000, 1000) HU; MR/SYNTH use the volume's
/// (p1, p99) intensity percentiles.
Volume normalize_default(const Volume& v);

/// Trilinear resample onto target spacing; new shape = round(shape * spacing / target).
Volume resample(const Volume& v, std::array<double, 3> target_spacing);

/// Deterministic synthetic multi-organ volume: non-overlapping ellipsoids with
/// separated mean intensities, optional Gaussian noise and smooth bias field.
std::pair<Volume, LabelMap> generate_phantom(const PhantomSpec& spec);

/// All `<stem>.f32` volumes in a directory, sorted by filename.
std::vector<std::string> list_volumes(const std::string& dir);

Volume nifti_load(const std::string& path);  // .nii or .nii.gz

}  // namespace smit
