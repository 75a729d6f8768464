// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "smit/augment.hpp"
#include "smit/graph.hpp"
#include "smit/params.hpp"
#include "smit/tokenizer.hpp"

namespace smit {

enum class DecoderKind { ONE_LAYER, MULTI_LAYER };

std::string to_string(DecoderKind k);
DecoderKind decoder_kind_from_string(const std::string& s);

/// Hierarchical windowed-attention encoder family. Each stage optionally
/// downsamples the token grid 2x on entry (patch merging); the product of the
/// merge factors must equal mask_grid_downsample so the final grid coincides
/// with the masking grid.
struct EncoderConfig {
  int64_t view_size = 32;  // S
  int64_t patch_size = 2;  // P
  int64_t window = 4;
  std::vector<int64_t> embed_dims = {32, 32};
  std::vector<int64_t> depths = {2, 2};
  std::vector<int64_t> num_heads = {2, 2};
  std::vector<int64_t> stage_merge = {2, 2};  // grid downsample at stage entry (1 or 2)
  int64_t mask_grid_downsample = 4;
  int64_t proj_dim_k = 256;  // K logits of h_patch / h_cls
  double mlp_ratio = 2.0;
  DecoderKind decoder_kind = DecoderKind::ONE_LAYER;

  void validate() const;
  int64_t fine_grid() const { return view_size / patch_size; }
  int64_t final_grid() const { return fine_grid() / mask_grid_downsample; }
  int64_t n_fine() const { return fine_grid() * fine_grid() * fine_grid(); }
  int64_t n_final() const { return final_grid() * final_grid() * final_grid(); }
  int64_t n_mask() const { return n_final(); }
  int64_t p_eff() const { return view_size / final_grid(); }  // voxels per final token per axis

  static EncoderConfig desk();
  static EncoderConfig paper_scale();  // SWIN-small-like geometry: 96^3 crops, 768 final dim
};

/// (name, shape) of every parameter the encoder family owns, including the
/// mask token and the three heads. Order is lexicographic by name downstream.
std::vector<std::pair<std::string, std::vector<int64_t>>> encoder_param_shapes(
    const EncoderConfig& cfg);
void register_encoder_params(const EncoderConfig& cfg, ParamStore& store);
int64_t encoder_param_count(const EncoderConfig& cfg);
/// Parameter count of the pixel-prediction head alone for the given kind.
int64_t pred_head_param_count(const EncoderConfig& cfg, DecoderKind kind);

/// Names shared between student and teacher (backbone + distillation heads;
/// excludes the mask token and the pixel-prediction head).
std::vector<std::string> ema_shared_names(const EncoderConfig& cfg);

struct ParamsRef {
  const ParamStore* store = nullptr;
  std::string prefix;  // e.g. "" or "enc."
  bool trainable = true;
};

struct EncoderFeatures {
  Var fine;                 // (n_fine, embed_dims[0]) pre-stage embeddings (post mask + pos)
  std::vector<Var> stages;  // per-stage outputs, stages.back() is pre-norm final
  Var tokens;               // (n_final, C_last) after the final norm
  Var global;               // (C_last,) mean-pooled
};

class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg);

  const EncoderConfig& config() const { return cfg_; }

  /// Full forward. `fine_row_mask` (n_fine entries) replaces masked patch
  /// embeddings with the mask token before positional encoding; pass nullptr
  /// for the clean path (teacher, inference).
  EncoderFeatures forward(Graph& g, const View& view, const std::vector<uint8_t>* fine_row_mask,
                          const ParamsRef& p) const;

  Var project_patch(Graph& g, Var tokens, const ParamsRef& p) const;  // (n_final, K)
  Var project_cls(Graph& g, Var global, const ParamsRef& p) const;    // (1, K)
  /// Reconstructed voxel blocks, one per final token: (n_final, p_eff^3).
  Var predict_pixels(Graph& g, Var tokens, const ParamsRef& p) const;

 private:
  struct StagePlan {
    int64_t grid = 0, dim = 0, heads = 0;
    int64_t win = 0, shift = 0;          // effective window and shift step
    int64_t grid_pad = 0, n_win = 0, ws = 0;
    IndexVec part[2];                    // window partition (0: unshifted, 1: shifted)
    IndexVec unpart[2];                  // inverse map back to grid rows
    std::shared_ptr<const Tensor> attn_mask[2];  // additive, (nW*heads*ws, ws) or null
    IndexVec q_idx, k_idx, v_idx;        // (nW*ws,3C) -> (nW*heads, ws, dh)
    IndexVec head_merge;                 // (nW*heads, ws, dh) -> (nW*ws, C)
    IndexVec merge_idx;                  // patch-merge neighbor gather (8 per row) or null
  };

  Var attention_block(Graph& g, Var x, const StagePlan& s, int64_t block_index,
                      const std::string& pfx, const ParamsRef& p) const;

  EncoderConfig cfg_;
  std::vector<StagePlan> plan_;
  IndexVec pos_idx_[3];                   // fine-grid z/y/x coordinate per row
  IndexVec pred_unpatch_;                 // (1, S^3) volume -> (n_final, p_eff^3) blocks
};

}  // namespace smit
