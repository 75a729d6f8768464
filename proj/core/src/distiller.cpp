// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/distiller.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "smit/parallel.hpp"
#include "smit/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace smit {

std::string StepReport::to_jsonl(double wall_ms) const {
  json j;
  j["step"] = step;
  j["epoch"] = epoch;
  j["l_mip"] = loss.l_mip;
  j["l_mpd"] = loss.l_mpd;
  j["l_itd"] = loss.l_itd;
  j["l_total"] = loss.l_total;
  j["masked_fraction"] = loss.masked_fraction;
  j["teacher_patch_entropy"] = loss.teacher_patch_entropy;
  j["teacher_cls_entropy"] = loss.teacher_cls_entropy;
  j["lr"] = lr;
  j["lambda_m"] = lambda_m;
  j["tau_t"] = tau_t;
  j["grad_norm"] = grad_norm;
  if (!probe_s.empty()) {
    j["probe_s"] = probe_s;
    j["probe_t"] = probe_t;
  }
  j["wall_ms"] = wall_ms;  // timing lives in its own field; comparisons ignore it
  return j.dump();
}

Distiller::Distiller(const TrainConfig& cfg) : cfg_(cfg), encoder_(cfg.encoder) {
  cfg_.validate();
  register_encoder_params(cfg_.encoder, student_);
  student_.init_random(cfg_.seed);
  ema_names_ = ema_shared_names(cfg_.encoder);
  for (const auto& n : ema_names_) teacher_.create(n, student_.at(n).shape);
  for (const auto& n : ema_names_) teacher_.at(n) = student_.at(n);
  center_patch_ = Tensor::zeros({cfg_.encoder.proj_dim_k});
  center_cls_ = Tensor::zeros({cfg_.encoder.proj_dim_k});
  AdamW::Options o;
  o.beta1 = cfg_.adam_beta1;
  o.beta2 = cfg_.adam_beta2;
  o.weight_decay = cfg_.weight_decay;
  opt_ = std::make_unique<AdamW>(student_, o);
  if (cfg_.probe_params > 0) {
    Rng rng(derive_seed(cfg_.seed, "probes"));
    for (int64_t i = 0; i < cfg_.probe_params; ++i) {
      const auto& name = ema_names_[rng.below(ema_names_.size())];
      probes_.emplace_back(name, static_cast<int64_t>(rng.below(
                                     static_cast<uint64_t>(student_.at(name).numel()))));
    }
  }
}

const std::vector<std::string>& Distiller::optimizer_param_names() const {
  return opt_->param_names();
}

double Distiller::scheduled_lambda() const {
  if (forced_lambda_ >= 0.0) return forced_lambda_;
  return momentum_schedule(std::min(step_, total_steps_), total_steps_,
                           cfg_.schedule.momentum_start, cfg_.schedule.momentum_end);
}

PreparedPair Distiller::prepare_pair(const Volume& vol, int64_t epoch, int64_t item) const {
  AugmentConfig acfg;
  acfg.view_size = cfg_.encoder.view_size;
  acfg.flip_prob = cfg_.flip_prob;
  acfg.jitter = cfg_.jitter;
  PreparedPair out;
  const uint64_t pair_seed = derive_seed(cfg_.seed, "pair", static_cast<uint64_t>(epoch),
                                         static_cast<uint64_t>(item));
  out.views = sample_two_views(vol, acfg, pair_seed);
  const int64_t nm = cfg_.encoder.n_mask();
  out.mask_u = sample_mask(nm, cfg_.mask_ratio,
                           derive_seed(cfg_.seed, "mask", static_cast<uint64_t>(epoch),
                                       static_cast<uint64_t>(item), 0));
  out.mask_v = sample_mask(nm, cfg_.mask_ratio,
                           derive_seed(cfg_.seed, "mask", static_cast<uint64_t>(epoch),
                                       static_cast<uint64_t>(item), 1));
  return out;
}

struct Distiller::ItemResult {
  LossReport report;
  std::map<std::string, Tensor> grads;
  Tensor teacher_patch_logits;  // (2*n_final, K) patch logits of both clean views
  Tensor teacher_cls_logits;    // (2, K)
  bool want_grads = true;
};

void Distiller::build_item(const PreparedPair& item, ItemResult& out) const {
  const bool distill = cfg_.enable_mpd || cfg_.enable_itd;
  const int64_t n_final = cfg_.encoder.n_final();
  const int64_t K = cfg_.encoder.proj_dim_k;
  const int64_t coarse = cfg_.encoder.final_grid();
  const int64_t fine = cfg_.encoder.fine_grid();

  SharpenParams sp;
  sp.tau_s = cfg_.schedule.tau_s;
  sp.tau_t = teacher_temp_schedule(epoch_, cfg_.schedule);
  sp.center_patch = center_patch_;
  sp.center_cls = center_cls_;

  // Teacher forward on the clean views; plain constants downstream.
  TeacherViewOut t_u, t_v;
  if (distill) {
    Graph tg;
    ParamsRef tref{&teacher_, "", false};
    for (int view = 0; view < 2; ++view) {
      const View& v = view == 0 ? item.views.u : item.views.v;
      auto feats = encoder_.forward(tg, v, nullptr, tref);
      Var pl = encoder_.project_patch(tg, feats.tokens, tref);
      Var cl = encoder_.project_cls(tg, feats.global, tref);
      TeacherViewOut& t = view == 0 ? t_u : t_v;
      t.patch_logits = pl.val();
      t.cls_logits = cl.val().reshaped({K});
    }
    out.teacher_patch_logits = Tensor({2 * n_final, K});
    std::copy(t_u.patch_logits.data.begin(), t_u.patch_logits.data.end(),
              out.teacher_patch_logits.data.begin());
    std::copy(t_v.patch_logits.data.begin(), t_v.patch_logits.data.end(),
              out.teacher_patch_logits.data.begin() + static_cast<ptrdiff_t>(n_final * K));
    out.teacher_cls_logits = Tensor({2, K});
    std::copy(t_u.cls_logits.data.begin(), t_u.cls_logits.data.end(),
              out.teacher_cls_logits.data.begin());
    std::copy(t_v.cls_logits.data.begin(), t_v.cls_logits.data.end(),
              out.teacher_cls_logits.data.begin() + static_cast<ptrdiff_t>(K));
    out.report.teacher_patch_entropy =
        mean_entropy(sharpen(out.teacher_patch_logits, sp.tau_t, &center_patch_));
    out.report.teacher_cls_entropy =
        mean_entropy(sharpen(out.teacher_cls_logits, sp.tau_t, &center_cls_));
  }

  // Student forward on both corrupted views in one graph (shared leaves).
  Graph g;
  ParamsRef sref{&student_, "", true};
  StudentViewOut su, sv;
  for (int view = 0; view < 2; ++view) {
    const View& v = view == 0 ? item.views.u : item.views.v;
    const MaskVector& m = view == 0 ? item.mask_u : item.mask_v;
    const auto fine_mask = broadcast_mask(m, coarse, fine);
    auto feats = encoder_.forward(g, v, &fine_mask, sref);
    StudentViewOut& s = view == 0 ? su : sv;
    s.mask = m;
    s.target_blocks = std::make_shared<const Tensor>(patchify(v, cfg_.encoder.p_eff()));
    if (cfg_.enable_mip) s.pred_blocks = encoder_.predict_pixels(g, feats.tokens, sref);
    if (distill) {
      s.patch_logits = encoder_.project_patch(g, feats.tokens, sref);
      s.cls_logits = encoder_.project_cls(g, feats.global, sref);
    }
  }

  // Assemble the symmetrized objective honoring the ablation toggles.
  Var mip = cfg_.enable_mip
                ? weighted_sum({{0.5, mip_loss(su.pred_blocks, su.target_blocks, su.mask)},
                                {0.5, mip_loss(sv.pred_blocks, sv.target_blocks, sv.mask)}})
                : g.constant(Tensor::scalar(0.0));
  Var mpd = cfg_.enable_mpd
                ? weighted_sum({{0.5, mpd_loss(su.patch_logits, t_u.patch_logits, su.mask, sp)},
                                {0.5, mpd_loss(sv.patch_logits, t_v.patch_logits, sv.mask, sp)}})
                : g.constant(Tensor::scalar(0.0));
  Var itd = cfg_.enable_itd
                ? weighted_sum({{0.5, itd_loss(su.cls_logits, t_v.cls_logits, sp)},
                                {0.5, itd_loss(sv.cls_logits, t_u.cls_logits, sp)}})
                : g.constant(Tensor::scalar(0.0));
  Var total = weighted_sum({{1.0, mip}, {cfg_.lambda_mpd, mpd}, {cfg_.lambda_itd, itd}});

  out.report.l_mip = mip.val().item();
  out.report.l_mpd = mpd.val().item();
  out.report.l_itd = itd.val().item();
  out.report.l_total = total.val().item();
  out.report.masked_fraction =
      0.5 * (static_cast<double>(item.mask_u.count()) + static_cast<double>(item.mask_v.count())) /
      static_cast<double>(cfg_.encoder.n_mask());

  if (out.want_grads) {
    g.backward(total);
    g.export_grads(out.grads);
  }
}

double Distiller::loss_value(const std::vector<PreparedPair>& batch) const {
  double acc = 0.0;
  for (const auto& item : batch) {
    ItemResult r;
    r.want_grads = false;
    build_item(item, r);
    acc += r.report.l_total;
  }
  return acc / static_cast<double>(batch.size());
}

std::map<std::string, Tensor> Distiller::loss_and_grads(const std::vector<PreparedPair>& batch,
                                                        LossReport* report,
                                                        Tensor* teacher_patch_logits,
                                                        Tensor* teacher_cls_logits) const {
  const auto B = static_cast<int64_t>(batch.size());
  if (B == 0) throw std::invalid_argument("empty batch");
  std::vector<ItemResult> results(static_cast<size_t>(B));
  parallel_items(B, pick_threads(cfg_.num_threads, B),
                 [&](int64_t i) { build_item(batch[static_cast<size_t>(i)], results[static_cast<size_t>(i)]); });

  // Fixed-order reduction keeps results identical for any thread count.
  std::map<std::string, Tensor> grads;
  for (const auto& name : opt_->param_names()) grads.emplace(name, Tensor::zeros(student_.at(name).shape));
  LossReport mean;
  for (const auto& r : results) {
    for (auto& [name, gsum] : grads) {
      auto it = r.grads.find(name);
      if (it == r.grads.end()) continue;
      for (size_t i = 0; i < gsum.data.size(); ++i) gsum.data[i] += it->second.data[i];
    }
    mean.l_mip += r.report.l_mip;
    mean.l_mpd += r.report.l_mpd;
    mean.l_itd += r.report.l_itd;
    mean.l_total += r.report.l_total;
    mean.masked_fraction += r.report.masked_fraction;
    mean.teacher_patch_entropy += r.report.teacher_patch_entropy;
    mean.teacher_cls_entropy += r.report.teacher_cls_entropy;
  }
  const double invB = 1.0 / static_cast<double>(B);
  for (auto& [name, gsum] : grads)
    for (auto& v : gsum.data) v *= invB;
  mean.l_mip *= invB;
  mean.l_mpd *= invB;
  mean.l_itd *= invB;
  mean.l_total *= invB;
  mean.masked_fraction *= invB;
  mean.teacher_patch_entropy *= invB;
  mean.teacher_cls_entropy *= invB;
  if (report) *report = mean;

  if (teacher_patch_logits && results[0].teacher_patch_logits.numel() > 0) {
    const int64_t rows = results[0].teacher_patch_logits.shape[0];
    const int64_t K = results[0].teacher_patch_logits.shape[1];
    *teacher_patch_logits = Tensor({B * rows, K});
    *teacher_cls_logits = Tensor({B * 2, K});
    for (int64_t i = 0; i < B; ++i) {
      const auto& r = results[static_cast<size_t>(i)];
      std::copy(r.teacher_patch_logits.data.begin(), r.teacher_patch_logits.data.end(),
                teacher_patch_logits->data.begin() + static_cast<ptrdiff_t>(i * rows * K));
      std::copy(r.teacher_cls_logits.data.begin(), r.teacher_cls_logits.data.end(),
                teacher_cls_logits->data.begin() + static_cast<ptrdiff_t>(i * 2 * K));
    }
  }
  return grads;
}

StepReport Distiller::pretrain_step(const std::vector<PreparedPair>& batch) {
  StepReport rep;
  Tensor t_patch, t_cls;
  auto grads = loss_and_grads(batch, &rep.loss, &t_patch, &t_cls);
  if (!std::isfinite(rep.loss.l_total)) {
    json dump;
    dump["step"] = step_;
    dump["l_mip"] = rep.loss.l_mip;
    dump["l_mpd"] = rep.loss.l_mpd;
    dump["l_itd"] = rep.loss.l_itd;
    throw std::runtime_error("non-finite loss at step " + std::to_string(step_) + ": " + dump.dump());
  }
  rep.lr = lr_schedule(std::min(step_, total_steps_), total_steps_, warmup_steps_,
                       cfg_.schedule.lr0);
  rep.lambda_m = scheduled_lambda();
  rep.tau_t = teacher_temp_schedule(epoch_, cfg_.schedule);
  rep.grad_norm = opt_->step(grads, rep.lr, cfg_.grad_clip_norm);
  ema_update(teacher_, student_, ema_names_, rep.lambda_m);
  if (t_patch.numel() > 0) {
    update_center(center_patch_, t_patch, cfg_.center_rate);
    update_center(center_cls_, t_cls, cfg_.center_rate);
  }
  ++step_;
  rep.step = step_;
  rep.epoch = epoch_;
  for (const auto& [name, idx] : probes_) {
    rep.probe_s.push_back(student_.at(name)[idx]);
    rep.probe_t.push_back(teacher_.at(name)[idx]);
  }
  return rep;
}

Checkpoint Distiller::make_checkpoint() const {
  Checkpoint c;
  for (const auto& [name, t] : student_.values()) c.params.emplace("student." + name, t);
  for (const auto& [name, t] : teacher_.values()) c.params.emplace("teacher." + name, t);
  for (const auto& [name, t] : opt_->moments_m()) c.params.emplace("adam_m." + name, t);
  for (const auto& [name, t] : opt_->moments_v()) c.params.emplace("adam_v." + name, t);
  c.params.emplace("center_patch", center_patch_);
  c.params.emplace("center_cls", center_cls_);
  c.config_json = cfg_.to_json_string();
  c.step = step_;
  c.epoch = epoch_;
  c.extra["phase"] = "pretrain";
  return c;
}

Distiller Distiller::from_checkpoint(const std::string& dir) {
  Checkpoint c = load_checkpoint(dir);
  TrainConfig cfg = TrainConfig::from_json_string(c.config_json);
  Distiller d(cfg);
  for (auto& [name, t] : c.params) {
    if (name.rfind("student.", 0) == 0) d.student_.at(name.substr(8)) = t;
    else if (name.rfind("teacher.", 0) == 0) d.teacher_.at(name.substr(8)) = t;
    else if (name.rfind("adam_m.", 0) == 0) d.opt_->moments_m().at(name.substr(7)) = t;
    else if (name.rfind("adam_v.", 0) == 0) d.opt_->moments_v().at(name.substr(7)) = t;
    else if (name == "center_patch") d.center_patch_ = t;
    else if (name == "center_cls") d.center_cls_ = t;
  }
  d.step_ = c.step;
  d.epoch_ = c.epoch;
  d.opt_->set_step_count(c.step);
  return d;
}

std::string Distiller::pretrain(const std::vector<Volume>& volumes, const std::string& out_dir,
                                int64_t stop_after_epochs) {
  if (volumes.empty()) throw std::invalid_argument("pretrain: dataset is empty");
  fs::create_directories(out_dir);
  const auto Q = static_cast<int64_t>(volumes.size());
  const int64_t steps_per_epoch = (Q + cfg_.batch_size - 1) / cfg_.batch_size;
  total_steps_ = std::max<int64_t>(1, cfg_.schedule.epochs * steps_per_epoch);
  warmup_steps_ = std::min(cfg_.schedule.warmup_epochs * steps_per_epoch, total_steps_ - 1);

  std::ofstream log(fs::path(out_dir) / "metrics.jsonl", std::ios::app);
  if (!log) throw std::runtime_error("cannot open metrics log in " + out_dir);

  const std::string ckpt_root = (fs::path(out_dir) / "checkpoints").string();
  double best_total = std::numeric_limits<double>::infinity();
  std::vector<std::string> kept;

  // Resuming mid-run: epoch_ holds the number of completed epochs.
  const int64_t first_epoch = epoch_;
  std::string last_dir;
  for (int64_t e = first_epoch; e < cfg_.schedule.epochs; ++e) {
    if (stop_after_epochs > 0 && e - first_epoch >= stop_after_epochs) return last_dir;
    epoch_ = e;
    std::vector<int64_t> order(static_cast<size_t>(Q));
    for (int64_t i = 0; i < Q; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(derive_seed(cfg_.seed, "order", static_cast<uint64_t>(e)));
    shuffle_rng.shuffle(order);

    double epoch_total = 0.0;
    int64_t epoch_steps = 0;
    for (int64_t b = 0; b < Q; b += cfg_.batch_size) {
      const int64_t hi = std::min(Q, b + cfg_.batch_size);
      std::vector<PreparedPair> batch;
      batch.reserve(static_cast<size_t>(hi - b));
      for (int64_t i = b; i < hi; ++i)
        batch.push_back(prepare_pair(volumes[static_cast<size_t>(order[static_cast<size_t>(i)])], e,
                                     order[static_cast<size_t>(i)]));
      const auto t0 = std::chrono::steady_clock::now();
      StepReport rep;
      try {
        rep = pretrain_step(batch);
      } catch (const std::exception& ex) {
        std::ofstream dump(fs::path(out_dir) / "nonfinite_dump.json");
        dump << "{\"error\":\"" << ex.what() << "\",\"step\":" << step_ << "}\n";
        throw;
      }
      const double wall =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      log << rep.to_jsonl(wall) << "\n";
      epoch_total += rep.loss.l_total;
      ++epoch_steps;
    }
    log.flush();
    epoch_ = e + 1;  // completed epochs

    const std::string dir = (fs::path(ckpt_root) / ("epoch_" + std::to_string(e + 1))).string();
    save_checkpoint(make_checkpoint(), dir);
    last_dir = dir;
    kept.push_back(dir);
    const double mean_total = epoch_total / static_cast<double>(std::max<int64_t>(1, epoch_steps));
    if (mean_total < best_total) {
      best_total = mean_total;
      save_checkpoint(make_checkpoint(), (fs::path(ckpt_root) / "best").string());
    }
    while (static_cast<int64_t>(kept.size()) > cfg_.checkpoint_keep) {
      fs::remove_all(kept.front());
      kept.erase(kept.begin());
    }
  }
  const std::string final_dir = (fs::path(ckpt_root) / "final").string();
  save_checkpoint(make_checkpoint(), final_dir);
  return final_dir;
}

}  // namespace smit
