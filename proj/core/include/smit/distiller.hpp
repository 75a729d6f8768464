// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "smit/augment.hpp"
#include "smit/checkpoint.hpp"
#include "smit/config.hpp"
#include "smit/encoder.hpp"
#include "smit/objectives.hpp"
#include "smit/params.hpp"
#include "smit/schedules.hpp"
#include "smit/volume.hpp"

namespace smit {

/// A training example: two augmented views plus their independent masks.
struct PreparedPair {
  ViewPair views;
  MaskVector mask_u, mask_v;
};

struct StepReport {
  LossReport loss;
  double lr = 0.0, lambda_m = 0.0, tau_t = 0.0, grad_norm = 0.0;
  int64_t step = 0, epoch = 0;
  std::vector<double> probe_s, probe_t;  // optional parameter probes (post-step)
  std::string to_jsonl(double wall_ms) const;
};

/// Student/EMA-teacher pre-training driver. All randomness derives from
/// (config.seed, epoch, item) so resumed runs replay the identical stream.
class Distiller {
 public:
  explicit Distiller(const TrainConfig& cfg);
  static Distiller from_checkpoint(const std::string& dir);

  const TrainConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return encoder_; }
  ParamStore& student() { return student_; }
  const ParamStore& student() const { return student_; }
  const ParamStore& teacher() const { return teacher_; }
  const Tensor& center_patch() const { return center_patch_; }
  const Tensor& center_cls() const { return center_cls_; }
  int64_t step() const { return step_; }
  int64_t epoch() const { return epoch_; }
  const std::vector<std::string>& optimizer_param_names() const;
  const std::vector<std::string>& ema_names() const { return ema_names_; }

  /// Loop context used by the schedules; pretrain() sets these per dataset.
  void set_total_steps(int64_t t) { total_steps_ = t; }
  void set_warmup_steps(int64_t t) { warmup_steps_ = t; }
  void set_epoch(int64_t e) { epoch_ = e; }
  int64_t total_steps() const { return total_steps_; }

  PreparedPair prepare_pair(const Volume& vol, int64_t epoch, int64_t item_index) const;

  /// Pure loss evaluation on a fixed batch (no state mutation); used by the
  /// finite-difference checks.
  double loss_value(const std::vector<PreparedPair>& batch) const;

  /// Loss + parameter gradients averaged over the batch (no state mutation).
  std::map<std::string, Tensor> loss_and_grads(const std::vector<PreparedPair>& batch,
                                               LossReport* report,
                                               Tensor* teacher_patch_logits = nullptr,
                                               Tensor* teacher_cls_logits = nullptr) const;

  /// Ordered effects: student forward, teacher forward, symmetrized loss,
  /// optimizer step, EMA update, center update, step counter advance.
  StepReport pretrain_step(const std::vector<PreparedPair>& batch);

  /// Full pre-training over a volume list (one ViewPair per volume per epoch).
  /// Writes metrics.jsonl and per-epoch checkpoints under out_dir; returns the
  /// final checkpoint directory. `stop_after_epochs` > 0 simulates an
  /// interrupted run: at most that many epochs execute in this call and the
  /// path of the last epoch checkpoint is returned.
  std::string pretrain(const std::vector<Volume>& volumes, const std::string& out_dir,
                       int64_t stop_after_epochs = -1);

  /// EMA momentum for a forced-lambda test path (nullopt -> scheduled value).
  void force_lambda_m(double v) { forced_lambda_ = v; }
  void clear_forced_lambda() { forced_lambda_ = -1.0; }

  Checkpoint make_checkpoint() const;

 private:
  struct ItemResult;
  void build_item(const PreparedPair& item, ItemResult& out) const;
  double scheduled_lambda() const;

  TrainConfig cfg_;
  Encoder encoder_;
  ParamStore student_, teacher_;
  std::vector<std::string> ema_names_;
  Tensor center_patch_, center_cls_;
  std::unique_ptr<AdamW> opt_;
  int64_t step_ = 0, epoch_ = 0, total_steps_ = 1, warmup_steps_ = 0;
  double forced_lambda_ = -1.0;
  std::vector<std::pair<std::string, int64_t>> probes_;
};

}  // namespace smit
