// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>

#include "smit/graph.hpp"
#include "smit/tensor.hpp"
#include "smit/tokenizer.hpp"

namespace smit {

/// Temperatures and centering state used to sharpen token distributions.
struct SharpenParams {
  double tau_s = 0.1;
  double tau_t = 0.04;
  Tensor center_patch;  // (K,), subtracted from teacher patch logits
  Tensor center_cls;    // (K,), subtracted from teacher global logits
};

struct LossReport {
  double l_mip = 0.0, l_mpd = 0.0, l_itd = 0.0, l_total = 0.0;
  double masked_fraction = 0.0;
  double teacher_patch_entropy = 0.0, teacher_cls_entropy = 0.0;
};

/// softmax((logits - center) / tau) along the trailing K axis; rows sum to 1,
/// entries strictly positive. Plain tensor math: used on the gradient-free
/// teacher side and in tests.
Tensor sharpen(const Tensor& logits, double tau, const Tensor* center = nullptr);

/// Mean Shannon entropy of row-stochastic distributions.
double mean_entropy(const Tensor& probs);

/// Mean absolute error over voxels of masked positions; 0 when nothing is masked.
Var mip_loss(Var pred_blocks, std::shared_ptr<const Tensor> target_blocks, const MaskVector& mask);

/// Cross-entropy between the sharpened teacher patch distribution (clean view)
/// and the student distribution (corrupted view), averaged over masked positions.
Var mpd_loss(Var student_patch_logits, const Tensor& teacher_patch_logits, const MaskVector& mask,
             const SharpenParams& params);

/// Cross-entropy between the single sharpened teacher global distribution (from
/// the other clean view) and the student global distribution.
Var itd_loss(Var student_cls_logits, const Tensor& teacher_cls_logits, const SharpenParams& params);

/// Student forward products for one corrupted view.
struct StudentViewOut {
  Var pred_blocks;   // (n_final, p_eff^3)
  Var patch_logits;  // (n_final, K)
  Var cls_logits;    // (1, K)
  std::shared_ptr<const Tensor> target_blocks;  // clean view patchified at p_eff
  MaskVector mask;   // final-grid mask
};

/// Teacher forward products for one clean view (constants; no gradient).
struct TeacherViewOut {
  Tensor patch_logits;  // (n_final, K)
  Tensor cls_logits;    // (K,)
};

struct LossVars {
  Var mip, mpd, itd, total;
  LossReport report() const;
};

/// Symmetrized objective:
///   L_MIP = 1/2 [mip(u~) + mip(v~)]
///   L_MPD = 1/2 [mpd(u~ vs t(u)) + mpd(v~ vs t(v))]
///   L_ITD = 1/2 [itd(u~ vs t(v)) + itd(v~ vs t(u))]
///   L_total = L_MIP + lambda_mpd * L_MPD + lambda_itd * L_ITD
/// Teacher outputs may be null when both lambdas are zero.
LossVars symmetrized_total(Graph& g, const StudentViewOut& u_tilde, const StudentViewOut& v_tilde,
                           const TeacherViewOut* t_u, const TeacherViewOut* t_v,
                           const SharpenParams& params, double lambda_mpd, double lambda_itd);

/// center <- rate * center + (1 - rate) * row-mean(batch_logits).
void update_center(Tensor& center, const Tensor& batch_logits, double rate);

}  // namespace smit
