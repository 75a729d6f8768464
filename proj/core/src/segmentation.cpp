// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "smit/parallel.hpp"
#include "smit/rng.hpp"
#include "smit/schedules.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace smit {

// ---- Dice -------------------------------------------------------------------------------------

DiceTable dice_score(const LabelMap& pred, const LabelMap& gt) {
  if (pred.shape != gt.shape) throw std::invalid_argument("dice_score: shape mismatch");
  const int C = std::max(pred.num_classes, gt.num_classes);
  std::vector<int64_t> inter(static_cast<size_t>(C), 0), pc(static_cast<size_t>(C), 0),
      gc(static_cast<size_t>(C), 0);
  for (size_t i = 0; i < gt.labels.size(); ++i) {
    const uint16_t p = pred.labels[i], g = gt.labels[i];
    ++pc[p];
    ++gc[g];
    if (p == g) ++inter[p];
  }
  DiceTable out;
  double sum = 0.0;
  int present = 0;
  bool pred_foreground = false;
  for (int c = 1; c < C; ++c) {
    const auto ci = static_cast<size_t>(c);
    double d;
    if (pc[ci] == 0 && gc[ci] == 0) d = 1.0;
    else if (pc[ci] == 0 || gc[ci] == 0) d = 0.0;
    else d = 2.0 * static_cast<double>(inter[ci]) / static_cast<double>(pc[ci] + gc[ci]);
    out.per_class[c] = d;
    if (gc[ci] > 0) {
      sum += d;
      ++present;
    }
    if (pc[ci] > 0) pred_foreground = true;
  }
  out.mean = present > 0 ? sum / static_cast<double>(present) : (pred_foreground ? 0.0 : 1.0);
  return out;
}

std::string DiceTable::to_json() const {
  json j;
  j["mean"] = mean;
  for (const auto& [c, d] : per_class) j["per_class"][std::to_string(c)] = d;
  return j.dump();
}

std::string DiceTable::to_csv_row(const std::string& case_id) const {
  std::ostringstream os;
  os << case_id << ',' << mean << ',';
  bool first = true;
  for (const auto& [c, d] : per_class) {
    if (!first) os << '|';
    os << c << ':' << d;
    first = false;
  }
  return os.str();
}

// ---- SegModel ---------------------------------------------------------------------------------

namespace {
bool is_backbone(const std::string& name) {
  return name != "mask_token" && name.rfind("head_patch.", 0) != 0 &&
         name.rfind("head_cls.", 0) != 0 && name.rfind("head_pred.", 0) != 0;
}
}  // namespace

SegModel::SegModel(EncoderConfig enc_cfg, int num_classes, int64_t base_channels)
    : enc_cfg_(std::move(enc_cfg)), encoder_(enc_cfg_), num_classes_(num_classes) {
  if (num_classes_ < 2) throw std::invalid_argument("seg: need at least 2 classes");
  for (auto& [name, shape] : encoder_param_shapes(enc_cfg_))
    if (is_backbone(name)) params_.create(name, shape);
  build_plan(base_channels);
}

void SegModel::build_plan(int64_t bc) {
  struct Feat {
    int64_t grid, ch;
    int idx;  // stage index, -1 = fine
  };
  std::vector<Feat> feats;
  int64_t grid = enc_cfg_.fine_grid();
  std::vector<int64_t> stage_grids;
  for (size_t s = 0; s < enc_cfg_.embed_dims.size(); ++s) {
    grid /= enc_cfg_.stage_merge[s];
    stage_grids.push_back(grid);
  }
  for (int s = static_cast<int>(enc_cfg_.embed_dims.size()) - 1; s >= 0; --s)
    feats.push_back({stage_grids[static_cast<size_t>(s)], enc_cfg_.embed_dims[static_cast<size_t>(s)], s});
  feats.push_back({enc_cfg_.fine_grid(), enc_cfg_.embed_dims[0], -1});

  int64_t cur_grid = feats[0].grid, cur_ch = feats[0].ch;
  int j = 0;
  for (size_t i = 1; i < feats.size(); ++i) {
    DecLevel L;
    L.grid_in = cur_grid;
    L.grid_out = feats[i].grid;
    L.cin = cur_ch;
    L.skip_ch = feats[i].ch;
    L.cout = std::max<int64_t>(8, bc >> j);
    L.skip_feat = feats[i].idx;
    L.upsample = feats[i].grid != cur_grid;
    L.mix3x3 = feats[i].grid <= 8;
    if (L.upsample && feats[i].grid != 2 * cur_grid)
      throw std::logic_error("seg: unexpected grid progression");
    plan_.push_back(L);
    cur_grid = feats[i].grid;
    cur_ch = L.cout;
    ++j;
  }
  // Upsample from the fine token grid back to voxel resolution.
  int64_t vox = enc_cfg_.fine_grid();
  while (vox < enc_cfg_.view_size) {
    DecLevel L;
    L.grid_in = vox;
    L.grid_out = 2 * vox;
    L.cin = cur_ch;
    L.skip_ch = 0;
    L.cout = std::max<int64_t>(8, bc >> j);
    L.skip_feat = -2;
    L.upsample = true;
    L.mix3x3 = false;
    plan_.push_back(L);
    cur_ch = L.cout;
    vox *= 2;
    ++j;
  }

  for (size_t l = 0; l < plan_.size(); ++l) {
    const DecLevel& L = plan_[l];
    const std::string pfx = "seg.dec" + std::to_string(l) + ".";
    int64_t mix_in = L.cin;
    if (L.upsample) {
      params_.create(pfx + "up.w", {L.cin, L.cout, 2, 2, 2});
      params_.create(pfx + "up.b", {L.cout});
      mix_in = L.cout;
    }
    if (L.skip_feat != -2) {
      mix_in += L.skip_ch;
      if (L.mix3x3) params_.create(pfx + "mix.w", {L.cout, mix_in, 3, 3, 3});
      else params_.create(pfx + "mix.w", {L.cout, mix_in});
      params_.create(pfx + "mix.b", {L.cout});
    }
  }
  params_.create("seg.out.w", {num_classes_, cur_ch});
  params_.create("seg.out.b", {num_classes_});
}

void SegModel::init_random(uint64_t seed) { params_.init_random(seed); }

void SegModel::init_from_pretrain(const Checkpoint& ckpt) {
  for (auto& [name, t] : params_.values()) {
    if (name.rfind("seg.", 0) == 0) continue;
    auto it = ckpt.params.find("student." + name);
    if (it == ckpt.params.end())
      throw std::runtime_error("pretrain checkpoint is missing backbone parameter " + name);
    if (!it->second.same_shape(t))
      throw std::runtime_error("pretrain checkpoint geometry mismatch on " + name);
    t = it->second;
  }
}

Var SegModel::forward_logits(Graph& g, const View& view, bool trainable) const {
  ParamsRef ref{&params_, "", trainable};
  auto feats = encoder_.forward(g, view, nullptr, ref);
  auto volume_of = [&](Var rows, int64_t n, int64_t ch) { return transpose2d(rows, n, ch); };

  const auto& deepest = plan_.front();
  Var x = volume_of(feats.stages.back(), deepest.grid_in * deepest.grid_in * deepest.grid_in,
                    deepest.cin);
  int64_t ch = deepest.cin;
  for (size_t l = 0; l < plan_.size(); ++l) {
    const DecLevel& L = plan_[l];
    const std::string pfx = "seg.dec" + std::to_string(l) + ".";
    const int64_t gi = L.grid_in, go = L.grid_out;
    if (L.upsample) {
      Var uw = g.param(pfx + "up.w", params_.at(pfx + "up.w"), trainable);
      Var ub = g.param(pfx + "up.b", params_.at(pfx + "up.b"), trainable);
      x = conv_transpose2x(x, uw, ub, ch, L.cout, gi, gi, gi);
      ch = L.cout;
    }
    if (L.skip_feat == -2) {
      x = gelu(x);
      continue;
    }
    Var skip = L.skip_feat >= 0 ? feats.stages[static_cast<size_t>(L.skip_feat)] : feats.fine;
    Var skip_vol = volume_of(skip, go * go * go, L.skip_ch);
    x = concat_rows(x, skip_vol);
    ch += L.skip_ch;
    const int64_t nv = go * go * go;
    Var w = g.param(pfx + "mix.w", params_.at(pfx + "mix.w"), trainable);
    Var b = g.param(pfx + "mix.b", params_.at(pfx + "mix.b"), trainable);
    x = L.mix3x3 ? conv3x3(x, w, b, ch, L.cout, go, go, go) : conv1x1(x, w, b, ch, L.cout, nv);
    x = gelu(x);
    ch = L.cout;
  }
  const int64_t S = enc_cfg_.view_size;
  Var ow = g.param("seg.out.w", params_.at("seg.out.w"), trainable);
  Var ob = g.param("seg.out.b", params_.at("seg.out.b"), trainable);
  return conv1x1(x, ow, ob, ch, num_classes_, S * S * S);
}

Checkpoint SegModel::make_checkpoint(const TrainConfig& cfg) const {
  Checkpoint c;
  for (const auto& [name, t] : params_.values()) c.params.emplace("student." + name, t);
  c.config_json = cfg.to_json_string();
  c.extra["phase"] = "finetune";
  c.extra["num_classes"] = std::to_string(num_classes_);
  return c;
}

SegModel SegModel::from_checkpoint(const std::string& dir) {
  Checkpoint c = load_checkpoint(dir);
  TrainConfig cfg = TrainConfig::from_json_string(c.config_json);
  const int num_classes = std::stoi(c.extra.at("num_classes"));
  SegModel m(cfg.encoder, num_classes, cfg.seg_base_channels);
  for (auto& [name, t] : m.params_.values()) {
    auto it = c.params.find("student." + name);
    if (it == c.params.end()) throw std::runtime_error("finetune checkpoint missing " + name);
    t = it->second;
  }
  return m;
}

// ---- fine-tuning ------------------------------------------------------------------------------

FinetuneResult finetune(const TrainConfig& cfg, const std::string& init_checkpoint,
                        const std::vector<LabeledCase>& train, const std::vector<LabeledCase>& val,
                        const std::string& out_dir) {
  if (train.empty()) throw std::invalid_argument("finetune: empty dataset");
  const int num_classes = train[0].labels.num_classes;
  for (const auto& c : train)
    if (c.labels.num_classes != num_classes)
      throw std::invalid_argument("finetune: inconsistent num_classes");
  fs::create_directories(out_dir);

  SegModel model(cfg.encoder, num_classes, cfg.seg_base_channels);
  model.init_random(derive_seed(cfg.seed, "seg_init"));
  if (!init_checkpoint.empty() && init_checkpoint != "RANDOM_INIT")
    model.init_from_pretrain(load_checkpoint(init_checkpoint));

  AdamW::Options o;
  o.beta1 = cfg.adam_beta1;
  o.beta2 = cfg.adam_beta2;
  o.weight_decay = cfg.weight_decay;
  AdamW opt(model.params(), o);

  const auto n = static_cast<int64_t>(train.size());
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = std::max<int64_t>(1, cfg.finetune_epochs * steps_per_epoch);
  const double lr0 = cfg.schedule.lr0 * cfg.finetune_lr_scale;
  const int64_t S = cfg.encoder.view_size;
  const int64_t V = S * S * S;

  std::ofstream log(fs::path(out_dir) / "metrics.jsonl", std::ios::app);
  FinetuneResult result;
  int64_t step = 0;

  for (int64_t e = 0; e < cfg.finetune_epochs; ++e) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, "ft_order", static_cast<uint64_t>(e)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (int64_t b = 0; b < n; b += cfg.batch_size) {
      const int64_t hi = std::min(n, b + cfg.batch_size);
      const int64_t B = hi - b;
      struct Item {
        double loss = 0.0;
        std::map<std::string, Tensor> grads;
      };
      std::vector<Item> items(static_cast<size_t>(B));
      parallel_items(B, pick_threads(cfg.num_threads, B), [&](int64_t i) {
        const int64_t q = order[static_cast<size_t>(b + i)];
        const LabeledCase& cs = train[static_cast<size_t>(q)];
        AugmentConfig acfg;
        acfg.view_size = S;
        acfg.flip_prob = cfg.flip_prob;
        auto crop = sample_labeled_crop(cs.image, cs.labels, acfg,
                                        derive_seed(cfg.seed, "ft_crop", static_cast<uint64_t>(e),
                                                    static_cast<uint64_t>(q)));
        Graph g;
        Var logits = model.forward_logits(g, crop.image, true);
        auto labels = std::make_shared<const std::vector<uint16_t>>(std::move(crop.labels));
        Var loss = dice_ce_loss(logits, labels, num_classes, V, cfg.dice_weight, cfg.ce_weight);
        g.backward(loss);
        items[static_cast<size_t>(i)].loss = loss.val().item();
        g.export_grads(items[static_cast<size_t>(i)].grads);
      });
      std::map<std::string, Tensor> grads;
      for (const auto& name : opt.param_names())
        grads.emplace(name, Tensor::zeros(model.params().at(name).shape));
      double batch_loss = 0.0;
      for (const auto& it : items) {
        batch_loss += it.loss;
        for (auto& [name, gsum] : grads) {
          auto f = it.grads.find(name);
          if (f == it.grads.end()) continue;
          for (size_t k = 0; k < gsum.data.size(); ++k) gsum.data[k] += f->second.data[k];
        }
      }
      const double invB = 1.0 / static_cast<double>(B);
      for (auto& [name, gsum] : grads)
        for (auto& v : gsum.data) v *= invB;
      batch_loss *= invB;
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("finetune: non-finite loss at step " + std::to_string(step));
      const double lr = lr_schedule(std::min(step, total_steps), total_steps, 0, lr0);
      opt.step(grads, lr, cfg.grad_clip_norm);
      ++step;
      epoch_loss += batch_loss;
      ++batches;
    }
    epoch_loss /= static_cast<double>(std::max<int64_t>(1, batches));
    result.epoch_loss.push_back(epoch_loss);

    json row;
    row["epoch"] = e;
    row["loss"] = epoch_loss;
    if (!val.empty()) {
      double dsum = 0.0;
      for (const auto& cs : val) {
        LabelMap pred = sliding_window_infer(model, cs.image, S, 0.5, cfg.num_threads);
        dsum += dice_score(pred, cs.labels).mean;
      }
      const double vdice = dsum / static_cast<double>(val.size());
      result.epoch_val_dice.push_back(vdice);
      row["val_dice"] = vdice;
    }
    log << row.dump() << "\n";
    log.flush();
  }

  const std::string dir = (fs::path(out_dir) / "checkpoints" / "final").string();
  save_checkpoint(model.make_checkpoint(cfg), dir);
  result.checkpoint_dir = dir;
  return result;
}

// ---- sliding-window inference -----------------------------------------------------------------

std::vector<int64_t> sliding_origins(int64_t extent, int64_t window, double overlap) {
  if (window < 1) throw std::invalid_argument("sliding_origins: window must be >= 1");
  if (overlap < 0.0 || overlap >= 1.0) throw std::invalid_argument("sliding_origins: overlap in [0,1)");
  if (window >= extent) return {0};
  const auto stride = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(static_cast<double>(window) * (1.0 - overlap))));
  std::vector<int64_t> out;
  for (int64_t o = 0;; o += stride) {
    if (o + window >= extent) {
      out.push_back(extent - window);
      break;
    }
    out.push_back(o);
  }
  return out;
}

LabelMap sliding_window_infer(const SegModel& model, const Volume& volume, int64_t window,
                              double overlap, int64_t num_threads) {
  const int64_t S = window;
  if (S != model.encoder_config().view_size)
    throw std::invalid_argument("sliding_window_infer: window must equal the model view size");
  const int C = model.num_classes();
  std::array<int64_t, 3> pshape = volume.shape;
  for (auto& d : pshape) d = std::max(d, S);

  std::vector<int64_t> oz = sliding_origins(pshape[0], S, overlap);
  std::vector<int64_t> oy = sliding_origins(pshape[1], S, overlap);
  std::vector<int64_t> ox = sliding_origins(pshape[2], S, overlap);
  std::vector<std::array<int64_t, 3>> origins;
  for (int64_t z : oz)
    for (int64_t y : oy)
      for (int64_t x : ox) origins.push_back({z, y, x});
  // Sorted origin order + compensated summation keeps fusion independent of
  // window enumeration order.
  std::sort(origins.begin(), origins.end());

  const auto n_win = static_cast<int64_t>(origins.size());
  std::vector<Tensor> logits(static_cast<size_t>(n_win));
  parallel_items(n_win, pick_threads(num_threads, n_win), [&](int64_t i) {
    Graph g;
    View v = crop_at(volume, S, origins[static_cast<size_t>(i)]);
    logits[static_cast<size_t>(i)] = model.forward_logits(g, v, false).val();
  });

  const int64_t pvol = pshape[0] * pshape[1] * pshape[2];
  std::vector<double> sum(static_cast<size_t>(C * pvol), 0.0);
  std::vector<double> comp(static_cast<size_t>(C * pvol), 0.0);
  std::vector<int32_t> count(static_cast<size_t>(pvol), 0);
  for (int64_t i = 0; i < n_win; ++i) {
    const auto& o = origins[static_cast<size_t>(i)];
    const Tensor& lg = logits[static_cast<size_t>(i)];
    for (int c = 0; c < C; ++c)
      for (int64_t z = 0; z < S; ++z)
        for (int64_t y = 0; y < S; ++y)
          for (int64_t x = 0; x < S; ++x) {
            const int64_t pidx =
                ((o[0] + z) * pshape[1] + (o[1] + y)) * pshape[2] + (o[2] + x);
            const auto si = static_cast<size_t>(c * pvol + pidx);
            const double val = lg[(static_cast<int64_t>(c) * S * S * S) + (z * S + y) * S + x];
            const double yk = val - comp[si];
            const double t = sum[si] + yk;
            comp[si] = (t - sum[si]) - yk;
            sum[si] = t;
          }
    for (int64_t z = 0; z < S; ++z)
      for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x)
          ++count[static_cast<size_t>(((o[0] + z) * pshape[1] + (o[1] + y)) * pshape[2] + o[2] + x)];
  }

  LabelMap out;
  out.shape = volume.shape;
  out.spacing = volume.spacing;
  out.num_classes = C;
  out.labels.assign(static_cast<size_t>(out.numel()), 0);
  const auto lo = padding_low(volume.shape, S);
  for (int64_t z = 0; z < volume.shape[0]; ++z)
    for (int64_t y = 0; y < volume.shape[1]; ++y)
      for (int64_t x = 0; x < volume.shape[2]; ++x) {
        const int64_t pidx = ((z + lo[0]) * pshape[1] + (y + lo[1])) * pshape[2] + (x + lo[2]);
        const double cnt = static_cast<double>(count[static_cast<size_t>(pidx)]);
        int best = 0;
        double best_val = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < C; ++c) {
          const double v = sum[static_cast<size_t>(c * pvol + pidx)] / cnt;
          if (v > best_val) {  // strict: ties keep the lowest class id
            best_val = v;
            best = c;
          }
        }
        out.labels[static_cast<size_t>((z * volume.shape[1] + y) * volume.shape[2] + x)] =
            static_cast<uint16_t>(best);
      }
  return out;
}

std::vector<int> fold_assignment(const std::vector<std::string>& case_ids, int k) {
  if (k < 1) throw std::invalid_argument("fold_assignment: k must be >= 1");
  std::vector<int> out;
  out.reserve(case_ids.size());
  for (const auto& id : case_ids) {
    const std::string stem = fs::path(id).stem().string();
    out.push_back(static_cast<int>(fnv1a64(stem) % static_cast<uint64_t>(k)));
  }
  return out;
}

}  // namespace smit
