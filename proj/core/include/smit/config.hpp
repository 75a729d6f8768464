// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "smit/encoder.hpp"
#include "smit/schedules.hpp"

namespace smit {

/// Full training configuration. Every knob has a built-in default; a JSON
/// config file overrides defaults, and CLI flags override the file.
struct TrainConfig {
  EncoderConfig encoder;
  ScheduleConfig schedule;

  // augmentation
  double flip_prob = 0.0;
  double jitter = 0.0;

  // masking
  double mask_ratio = 0.7;

  // objective
  double lambda_mpd = 0.1;
  double lambda_itd = 0.1;
  double center_rate = 0.9;
  bool enable_mip = true;  // objective ablation toggles
  bool enable_mpd = true;
  bool enable_itd = true;

  // optimization
  int64_t batch_size = 4;
  double weight_decay = 0.05;
  double grad_clip_norm = 3.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;

  // fine-tuning
  double finetune_lr_scale = 0.5;
  int64_t finetune_epochs = 60;
  double dice_weight = 0.5;
  double ce_weight = 0.5;
  int64_t seg_base_channels = 24;

  // run control
  uint64_t seed = 0;
  int64_t num_threads = 0;  // 0 = min(batch, hardware)
  int64_t checkpoint_keep = 3;
  int64_t probe_params = 0;  // >0 logs that many parameter probes per step

  void validate() const;

  static TrainConfig desk();
  static TrainConfig paper_scale();

  std::string to_json_string() const;
  static TrainConfig from_json_string(const std::string& text);
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;

  /// Apply the subset of keys present in `overrides` (a JSON object) on top of
  /// this config. Unknown keys are an error.
  void apply_overrides(const std::string& overrides_json);
};

}  // namespace smit
