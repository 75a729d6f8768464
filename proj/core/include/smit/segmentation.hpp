// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smit/checkpoint.hpp"
#include "smit/config.hpp"
#include "smit/encoder.hpp"
#include "smit/volume.hpp"

namespace smit {

struct DiceTable {
  std::map<int, double> per_class;  // non-background classes
  double mean = 0.0;                // over non-background classes present in ground truth
  std::string to_json() const;
  std::string to_csv_row(const std::string& case_id) const;
};

/// Per-class DSC: 2|P∩G| / (|P|+|G|); 1.0 when both empty, 0.0 when exactly one is.
DiceTable dice_score(const LabelMap& pred, const LabelMap& gt);

struct LabeledCase {
  Volume image;  // normalized to [0,1]
  LabelMap labels;
  std::string id;
};

/// Pre-trained (or random) student backbone plus an upsampling decoder with
/// skip connections from every encoder stage.
class SegModel {
 public:
  SegModel(EncoderConfig enc_cfg, int num_classes, int64_t base_channels);

  void init_random(uint64_t seed);
  /// Copies the backbone subset out of a pre-training checkpoint ("student.*").
  void init_from_pretrain(const Checkpoint& ckpt);

  Var forward_logits(Graph& g, const View& view, bool trainable) const;  // (num_classes, S^3)

  const EncoderConfig& encoder_config() const { return enc_cfg_; }
  int num_classes() const { return num_classes_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Checkpoint make_checkpoint(const TrainConfig& cfg) const;
  static SegModel from_checkpoint(const std::string& dir);

 private:
  struct DecLevel {
    int64_t grid_in = 0, grid_out = 0;
    int64_t cin = 0, skip_ch = 0, cout = 0;
    int skip_feat = 0;  // index into stage list; -1 = fine embeddings, -2 = none
    bool upsample = true;
    bool mix3x3 = true;
  };
  void build_plan(int64_t base_channels);

  EncoderConfig enc_cfg_;
  Encoder encoder_;
  int num_classes_;
  std::vector<DecLevel> plan_;
  ParamStore params_;
};

struct FinetuneResult {
  std::string checkpoint_dir;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_val_dice;  // empty if no validation cases
};

/// Supervised fine-tuning with combined soft-Dice + cross-entropy on random
/// crops. `init_checkpoint` empty -> random init. Deterministic per seed.
FinetuneResult finetune(const TrainConfig& cfg, const std::string& init_checkpoint,
                        const std::vector<LabeledCase>& train, const std::vector<LabeledCase>& val,
                        const std::string& out_dir);

/// Window origins along one axis: stride = window*(1-overlap), final origin
/// clipped so the windows cover [0, extent).
std::vector<int64_t> sliding_origins(int64_t extent, int64_t window, double overlap);

/// Tiled inference with uniformly averaged logits and per-voxel argmax
/// (lowest class id wins ties). volume is normalized [0,1].
LabelMap sliding_window_infer(const SegModel& model, const Volume& volume, int64_t window,
                              double overlap = 0.5, int64_t num_threads = 0);

/// Deterministic k-fold assignment by hash of the sorted file stem.
std::vector<int> fold_assignment(const std::vector<std::string>& case_ids, int k);

}  // namespace smit
