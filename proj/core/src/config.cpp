// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/config.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

using nlohmann::json;

namespace smit {

void TrainConfig::validate() const {
  encoder.validate();
  schedule.validate();
  if (mask_ratio < 0.0 || mask_ratio > 1.0)
    throw std::invalid_argument("config: mask_ratio out of [0,1]");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (center_rate < 0.0 || center_rate >= 1.0)
    throw std::invalid_argument("config: center_rate must be in [0,1)");
  if (encoder.view_size % (encoder.patch_size * encoder.mask_grid_downsample) != 0)
    throw std::invalid_argument("config: view size incompatible with tokenizer geometry");
  if (!enable_mip && !enable_mpd && !enable_itd)
    throw std::invalid_argument("config: at least one objective must be enabled");
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.encoder = EncoderConfig::desk();
  return c;
}

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.encoder = EncoderConfig::paper_scale();
  c.encoder.mask_grid_downsample = 8;
  return c;
}

namespace {

json to_json(const TrainConfig& c) {
  json j;
  j["encoder"] = {{"view_size", c.encoder.view_size},
                  {"patch_size", c.encoder.patch_size},
                  {"window", c.encoder.window},
                  {"embed_dims", c.encoder.embed_dims},
                  {"depths", c.encoder.depths},
                  {"num_heads", c.encoder.num_heads},
                  {"stage_merge", c.encoder.stage_merge},
                  {"mask_grid_downsample", c.encoder.mask_grid_downsample},
                  {"proj_dim_k", c.encoder.proj_dim_k},
                  {"mlp_ratio", c.encoder.mlp_ratio},
                  {"decoder_kind", to_string(c.encoder.decoder_kind)}};
  j["schedule"] = {{"lr0", c.schedule.lr0},
                   {"epochs", c.schedule.epochs},
                   {"warmup_epochs", c.schedule.warmup_epochs},
                   {"momentum_start", c.schedule.momentum_start},
                   {"momentum_end", c.schedule.momentum_end},
                   {"tau_t_start", c.schedule.tau_t_start},
                   {"tau_t_end", c.schedule.tau_t_end},
                   {"tau_t_warmup_epochs", c.schedule.tau_t_warmup_epochs},
                   {"tau_s", c.schedule.tau_s}};
  j["flip_prob"] = c.flip_prob;
  j["jitter"] = c.jitter;
  j["mask_ratio"] = c.mask_ratio;
  j["lambda_mpd"] = c.lambda_mpd;
  j["lambda_itd"] = c.lambda_itd;
  j["center_rate"] = c.center_rate;
  j["enable_mip"] = c.enable_mip;
  j["enable_mpd"] = c.enable_mpd;
  j["enable_itd"] = c.enable_itd;
  j["batch_size"] = c.batch_size;
  j["weight_decay"] = c.weight_decay;
  j["grad_clip_norm"] = c.grad_clip_norm;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["finetune_lr_scale"] = c.finetune_lr_scale;
  j["finetune_epochs"] = c.finetune_epochs;
  j["dice_weight"] = c.dice_weight;
  j["ce_weight"] = c.ce_weight;
  j["seg_base_channels"] = c.seg_base_channels;
  j["seed"] = c.seed;
  j["num_threads"] = c.num_threads;
  j["checkpoint_keep"] = c.checkpoint_keep;
  j["probe_params"] = c.probe_params;
  return j;
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void merge_into(TrainConfig& c, const json& j) {
  static const std::vector<std::string> known = {
      "encoder",        "schedule",        "flip_prob",      "jitter",
      "mask_ratio",     "lambda_mpd",      "lambda_itd",     "center_rate",
      "enable_mip",     "enable_mpd",      "enable_itd",     "batch_size",
      "weight_decay",   "grad_clip_norm",  "adam_beta1",     "adam_beta2",
      "finetune_lr_scale", "finetune_epochs", "dice_weight", "ce_weight",
      "seg_base_channels", "seed",         "num_threads",    "checkpoint_keep",
      "probe_params"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("config: unknown key '" + it.key() + "'");
  }
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    static const std::vector<std::string> eknown = {
        "view_size",   "patch_size", "window",      "embed_dims", "depths", "num_heads",
        "stage_merge", "mask_grid_downsample", "proj_dim_k", "mlp_ratio", "decoder_kind"};
    for (auto it = e.begin(); it != e.end(); ++it)
      if (std::find(eknown.begin(), eknown.end(), it.key()) == eknown.end())
        throw std::invalid_argument("config: unknown encoder key '" + it.key() + "'");
    maybe(e, "view_size", c.encoder.view_size);
    maybe(e, "patch_size", c.encoder.patch_size);
    maybe(e, "window", c.encoder.window);
    maybe(e, "embed_dims", c.encoder.embed_dims);
    maybe(e, "depths", c.encoder.depths);
    maybe(e, "num_heads", c.encoder.num_heads);
    maybe(e, "stage_merge", c.encoder.stage_merge);
    maybe(e, "mask_grid_downsample", c.encoder.mask_grid_downsample);
    maybe(e, "proj_dim_k", c.encoder.proj_dim_k);
    maybe(e, "mlp_ratio", c.encoder.mlp_ratio);
    if (e.contains("decoder_kind"))
      c.encoder.decoder_kind = decoder_kind_from_string(e.at("decoder_kind").get<std::string>());
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    static const std::vector<std::string> sknown = {
        "lr0",         "epochs",       "warmup_epochs",       "momentum_start", "momentum_end",
        "tau_t_start", "tau_t_end",    "tau_t_warmup_epochs", "tau_s"};
    for (auto it = s.begin(); it != s.end(); ++it)
      if (std::find(sknown.begin(), sknown.end(), it.key()) == sknown.end())
        throw std::invalid_argument("config: unknown schedule key '" + it.key() + "'");
    maybe(s, "lr0", c.schedule.lr0);
    maybe(s, "epochs", c.schedule.epochs);
    maybe(s, "warmup_epochs", c.schedule.warmup_epochs);
    maybe(s, "momentum_start", c.schedule.momentum_start);
    maybe(s, "momentum_end", c.schedule.momentum_end);
    maybe(s, "tau_t_start", c.schedule.tau_t_start);
    maybe(s, "tau_t_end", c.schedule.tau_t_end);
    maybe(s, "tau_t_warmup_epochs", c.schedule.tau_t_warmup_epochs);
    maybe(s, "tau_s", c.schedule.tau_s);
  }
  maybe(j, "flip_prob", c.flip_prob);
  maybe(j, "jitter", c.jitter);
  maybe(j, "mask_ratio", c.mask_ratio);
  maybe(j, "lambda_mpd", c.lambda_mpd);
  maybe(j, "lambda_itd", c.lambda_itd);
  maybe(j, "center_rate", c.center_rate);
  maybe(j, "enable_mip", c.enable_mip);
  maybe(j, "enable_mpd", c.enable_mpd);
  maybe(j, "enable_itd", c.enable_itd);
  maybe(j, "batch_size", c.batch_size);
  maybe(j, "weight_decay", c.weight_decay);
  maybe(j, "grad_clip_norm", c.grad_clip_norm);
  maybe(j, "adam_beta1", c.adam_beta1);
  maybe(j, "adam_beta2", c.adam_beta2);
  maybe(j, "finetune_lr_scale", c.finetune_lr_scale);
  maybe(j, "finetune_epochs", c.finetune_epochs);
  maybe(j, "dice_weight", c.dice_weight);
  maybe(j, "ce_weight", c.ce_weight);
  maybe(j, "seg_base_channels", c.seg_base_channels);
  maybe(j, "seed", c.seed);
  maybe(j, "num_threads", c.num_threads);
  maybe(j, "checkpoint_keep", c.checkpoint_keep);
  maybe(j, "probe_params", c.probe_params);
}

}  // namespace

std::string TrainConfig::to_json_string() const { return to_json(*this).dump(2); }

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  TrainConfig c = TrainConfig::desk();
  merge_into(c, json::parse(text));
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j;
  in >> j;
  TrainConfig c = TrainConfig::desk();
  merge_into(c, j);
  return c;
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  out << to_json_string() << "\n";
}

void TrainConfig::apply_overrides(const std::string& overrides_json) {
  merge_into(*this, json::parse(overrides_json));
}

}  // namespace smit
