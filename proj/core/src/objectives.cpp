// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace smit {

Tensor sharpen(const Tensor& logits, double tau, const Tensor* center) {
  if (!(tau > 0.0)) throw std::invalid_argument("sharpen: tau must be > 0");
  if (!all_finite(logits)) throw std::invalid_argument("sharpen: non-finite logits");
  const int64_t K = logits.shape.empty() ? logits.numel() : logits.shape.back();
  if (K < 1 || logits.numel() % K != 0) throw std::invalid_argument("sharpen: bad trailing axis");
  if (center && center->numel() != K) throw std::invalid_argument("sharpen: center width mismatch");
  const int64_t N = logits.numel() / K;
  Tensor out(logits.shape);
  for (int64_t r = 0; r < N; ++r) {
    const double* lr = logits.data.data() + r * K;
    double* yr = out.data.data() + r * K;
    double mx = -1e300;
    for (int64_t k = 0; k < K; ++k) {
      const double v = (lr[k] - (center ? (*center)[k] : 0.0)) / tau;
      yr[k] = v;
      mx = std::max(mx, v);
    }
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) {
      yr[k] = std::exp(yr[k] - mx);
      z += yr[k];
    }
    for (int64_t k = 0; k < K; ++k) yr[k] /= z;
  }
  return out;
}

double mean_entropy(const Tensor& probs) {
  const int64_t K = probs.shape.empty() ? probs.numel() : probs.shape.back();
  const int64_t N = probs.numel() / K;
  double h = 0.0;
  for (int64_t r = 0; r < N; ++r) {
    const double* pr = probs.data.data() + r * K;
    for (int64_t k = 0; k < K; ++k)
      if (pr[k] > 0.0) h -= pr[k] * std::log(pr[k]);
  }
  return h / static_cast<double>(N);
}

namespace {
ByteVec as_bytevec(const MaskVector& m) {
  return std::make_shared<const std::vector<uint8_t>>(m.m);
}
ByteVec all_ones(size_t n) {
  return std::make_shared<const std::vector<uint8_t>>(std::vector<uint8_t>(n, 1));
}
}  // namespace

Var mip_loss(Var pred_blocks, std::shared_ptr<const Tensor> target_blocks, const MaskVector& mask) {
  return l1_masked_mean(pred_blocks, std::move(target_blocks), as_bytevec(mask));
}

Var mpd_loss(Var student_patch_logits, const Tensor& teacher_patch_logits, const MaskVector& mask,
             const SharpenParams& params) {
  auto teacher = std::make_shared<Tensor>(
      sharpen(teacher_patch_logits, params.tau_t,
              params.center_patch.numel() > 0 ? &params.center_patch : nullptr));
  return ce_vs_teacher(student_patch_logits, std::move(teacher), params.tau_s, as_bytevec(mask));
}

Var itd_loss(Var student_cls_logits, const Tensor& teacher_cls_logits, const SharpenParams& params) {
  auto teacher = std::make_shared<Tensor>(
      sharpen(teacher_cls_logits, params.tau_t,
              params.center_cls.numel() > 0 ? &params.center_cls : nullptr));
  return ce_vs_teacher(student_cls_logits, std::move(teacher), params.tau_s, all_ones(1));
}

LossReport LossVars::report() const {
  LossReport r;
  r.l_mip = mip.val().item();
  r.l_mpd = mpd.val().item();
  r.l_itd = itd.val().item();
  r.l_total = total.val().item();
  return r;
}

LossVars symmetrized_total(Graph& g, const StudentViewOut& u_tilde, const StudentViewOut& v_tilde,
                           const TeacherViewOut* t_u, const TeacherViewOut* t_v,
                           const SharpenParams& params, double lambda_mpd, double lambda_itd) {
  LossVars out;
  Var mip_u = mip_loss(u_tilde.pred_blocks, u_tilde.target_blocks, u_tilde.mask);
  Var mip_v = mip_loss(v_tilde.pred_blocks, v_tilde.target_blocks, v_tilde.mask);
  out.mip = weighted_sum({{0.5, mip_u}, {0.5, mip_v}});

  if ((lambda_mpd != 0.0 || lambda_itd != 0.0) && (t_u == nullptr || t_v == nullptr))
    throw std::invalid_argument("symmetrized_total: teacher outputs required for MPD/ITD");
  if (t_u != nullptr && t_v != nullptr) {
    Var mpd_u = mpd_loss(u_tilde.patch_logits, t_u->patch_logits, u_tilde.mask, params);
    Var mpd_v = mpd_loss(v_tilde.patch_logits, t_v->patch_logits, v_tilde.mask, params);
    out.mpd = weighted_sum({{0.5, mpd_u}, {0.5, mpd_v}});
    Var itd_u = itd_loss(u_tilde.cls_logits, t_v->cls_logits, params);
    Var itd_v = itd_loss(v_tilde.cls_logits, t_u->cls_logits, params);
    out.itd = weighted_sum({{0.5, itd_u}, {0.5, itd_v}});
  } else {
    out.mpd = g.constant(Tensor::scalar(0.0));
    out.itd = g.constant(Tensor::scalar(0.0));
  }
  out.total = weighted_sum({{1.0, out.mip}, {lambda_mpd, out.mpd}, {lambda_itd, out.itd}});
  return out;
}

void update_center(Tensor& center, const Tensor& batch_logits, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("update_center: rate must be in [0,1)");
  const int64_t K = center.numel();
  if (K < 1 || batch_logits.numel() % K != 0)
    throw std::invalid_argument("update_center: width mismatch");
  const int64_t N = batch_logits.numel() / K;
  std::vector<double> mean(static_cast<size_t>(K), 0.0);
  for (int64_t r = 0; r < N; ++r) {
    const double* lr = batch_logits.data.data() + r * K;
    for (int64_t k = 0; k < K; ++k) mean[static_cast<size_t>(k)] += lr[k];
  }
  for (int64_t k = 0; k < K; ++k)
    center.data[static_cast<size_t>(k)] =
        rate * center.data[static_cast<size_t>(k)] +
        (1.0 - rate) * mean[static_cast<size_t>(k)] / static_cast<double>(N);
}

}  // namespace smit
