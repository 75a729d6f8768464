// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "smit/rng.hpp"
#include "smit/segmentation.hpp"

using namespace smit;
namespace fs = std::filesystem;

namespace {

LabelMap make_map(std::array<int64_t, 3> shape, int num_classes) {
  LabelMap l;
  l.shape = shape;
  l.num_classes = num_classes;
  l.labels.assign(static_cast<size_t>(l.numel()), 0);
  return l;
}

std::string tmp_dir(const std::string& tag) {
  auto d = fs::temp_directory_path() / ("smit_seg_" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

LabeledCase phantom_case(uint64_t seed, int blobs = 2, int64_t size = 32) {
  PhantomSpec spec;
  spec.size = {size, size, size};
  spec.num_blobs = blobs;
  spec.seed = seed;
  spec.noise_std = 0.03;
  auto [v, l] = generate_phantom(spec);
  LabeledCase c;
  c.image = normalize_default(v);
  c.labels = std::move(l);
  c.id = "case_" + std::to_string(seed);
  return c;
}

TrainConfig seg_config() {
  TrainConfig cfg = TrainConfig::desk();
  cfg.finetune_epochs = 2;
  cfg.seed = 5;
  cfg.num_threads = 1;
  cfg.batch_size = 2;
  return cfg;
}

}  // namespace

TEST_CASE("dice identities: equal maps, disjoint maps, half overlap") {
  LabelMap a = make_map({4, 4, 4}, 3);
  for (int i = 0; i < 10; ++i) a.labels[static_cast<size_t>(i)] = 1;
  for (int i = 20; i < 25; ++i) a.labels[static_cast<size_t>(i)] = 2;
  DiceTable t = dice_score(a, a);
  CHECK(t.per_class.at(1) == 1.0);
  CHECK(t.per_class.at(2) == 1.0);
  CHECK(t.mean == 1.0);

  LabelMap b = make_map({4, 4, 4}, 3);
  for (int i = 40; i < 50; ++i) b.labels[static_cast<size_t>(i)] = 1;
  DiceTable d = dice_score(b, a);  // class 1 disjoint, class 2 missing in pred
  CHECK(d.per_class.at(1) == 0.0);
  CHECK(d.per_class.at(2) == 0.0);

  // 100 pred, 100 gt, 50 overlap -> 0.5
  LabelMap gt = make_map({10, 10, 10}, 2);
  LabelMap pr = make_map({10, 10, 10}, 2);
  for (int i = 0; i < 100; ++i) gt.labels[static_cast<size_t>(i)] = 1;
  for (int i = 50; i < 150; ++i) pr.labels[static_cast<size_t>(i)] = 1;
  DiceTable h = dice_score(pr, gt);
  CHECK(h.per_class.at(1) == doctest::Approx(0.5).epsilon(1e-12));

  // both empty -> 1.0; exactly one empty -> 0.0
  LabelMap e1 = make_map({2, 2, 2}, 2), e2 = make_map({2, 2, 2}, 2);
  CHECK(dice_score(e1, e2).per_class.at(1) == 1.0);
  e1.labels[0] = 1;
  CHECK(dice_score(e1, e2).per_class.at(1) == 0.0);

  LabelMap wrong = make_map({2, 2, 3}, 2);
  CHECK_THROWS(dice_score(e1, wrong));
}

TEST_CASE("dice is symmetric and mean covers only classes present in ground truth") {
  Rng rng(2);
  LabelMap a = make_map({6, 6, 6}, 4), b = make_map({6, 6, 6}, 4);
  for (auto& v : a.labels) v = static_cast<uint16_t>(rng.below(4));
  for (auto& v : b.labels) v = static_cast<uint16_t>(rng.below(3));  // class 3 absent in b
  DiceTable ab = dice_score(a, b);
  DiceTable ba = dice_score(b, a);
  for (const auto& [c, d] : ab.per_class) CHECK(d == doctest::Approx(ba.per_class.at(c)).epsilon(1e-12));
  // mean of dice(a vs gt=b) uses classes {1,2} only
  const double expect = (ab.per_class.at(1) + ab.per_class.at(2)) / 2.0;
  CHECK(ab.mean == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("sliding origins: exact spec cases") {
  CHECK(sliding_origins(128, 96, 0.5) == std::vector<int64_t>{0, 32});
  CHECK(sliding_origins(96, 96, 0.5) == std::vector<int64_t>{0});
  CHECK(sliding_origins(64, 96, 0.5) == std::vector<int64_t>{0});  // smaller than window
  CHECK(sliding_origins(192, 96, 0.5) == std::vector<int64_t>{0, 48, 96});
  CHECK_THROWS(sliding_origins(128, 96, 1.0));
}

TEST_CASE("single-window inference is bit-identical to a direct forward pass") {
  TrainConfig cfg = seg_config();
  SegModel model(cfg.encoder, 3, cfg.seg_base_channels);
  model.init_random(7);
  LabeledCase c = phantom_case(11, 2, 32);

  LabelMap tiled = sliding_window_infer(model, c.image, 32, 0.5, 1);

  Graph g;
  View whole = central_crop(c.image, 32);
  Tensor logits = model.forward_logits(g, whole, false).val();
  const int64_t V = 32 * 32 * 32;
  for (int64_t v = 0; v < V; ++v) {
    int best = 0;
    double bv = -1e300;
    for (int cidx = 0; cidx < 3; ++cidx) {
      const double x = logits[cidx * V + v];
      if (x > bv) {
        bv = x;
        best = cidx;
      }
    }
    CHECK(tiled.labels[static_cast<size_t>(v)] == static_cast<uint16_t>(best));
  }
}

TEST_CASE("constant-logit model yields a constant label map regardless of windowing") {
  TrainConfig cfg = seg_config();
  SegModel model(cfg.encoder, 3, cfg.seg_base_channels);
  model.init_random(8);
  // zero every parameter on the path and set the output bias to fixed values
  for (auto& [name, t] : model.params().values())
    for (auto& v : t.data) v = 0.0;
  model.params().at("seg.out.b").data = {0.0, 2.0, 1.0};
  LabeledCase c = phantom_case(12, 2, 48);
  LabelMap out = sliding_window_infer(model, c.image, 32, 0.5, 1);
  for (uint16_t l : out.labels) CHECK(l == 1);
}

TEST_CASE("fusion is invariant to window enumeration order by construction") {
  // sliding_window_infer sorts origins internally; calling it on an identical
  // volume twice (memory layout differences aside) must agree bitwise.
  TrainConfig cfg = seg_config();
  SegModel model(cfg.encoder, 4, cfg.seg_base_channels);
  model.init_random(9);
  LabeledCase c = phantom_case(13, 3, 48);
  LabelMap a = sliding_window_infer(model, c.image, 32, 0.5, 1);
  LabelMap b = sliding_window_infer(model, c.image, 32, 0.5, 4);  // different thread count
  CHECK(a.labels == b.labels);
}

TEST_CASE("finetune: 0 epochs leaves the model at initialization") {
  TrainConfig cfg = seg_config();
  cfg.finetune_epochs = 0;
  std::vector<LabeledCase> train{phantom_case(20)};
  const std::string out = tmp_dir("noop");
  FinetuneResult r = finetune(cfg, "", train, {}, out);
  SegModel m = SegModel::from_checkpoint(r.checkpoint_dir);
  SegModel fresh(cfg.encoder, train[0].labels.num_classes, cfg.seg_base_channels);
  fresh.init_random(derive_seed(cfg.seed, "seg_init"));
  for (const auto& [name, t] : fresh.params().values())
    CHECK(m.params().at(name).data == t.data);
}

TEST_CASE("finetune is deterministic given the seed") {
  TrainConfig cfg = seg_config();
  cfg.finetune_epochs = 2;
  std::vector<LabeledCase> train{phantom_case(21), phantom_case(22)};
  std::vector<LabeledCase> val{phantom_case(23)};
  FinetuneResult a = finetune(cfg, "", train, val, tmp_dir("det_a"));
  FinetuneResult b = finetune(cfg, "", train, val, tmp_dir("det_b"));
  REQUIRE(a.epoch_loss.size() == b.epoch_loss.size());
  for (size_t i = 0; i < a.epoch_loss.size(); ++i) CHECK(a.epoch_loss[i] == b.epoch_loss[i]);
  REQUIRE(a.epoch_val_dice.size() == b.epoch_val_dice.size());
  for (size_t i = 0; i < a.epoch_val_dice.size(); ++i)
    CHECK(a.epoch_val_dice[i] == b.epoch_val_dice[i]);
}

TEST_CASE("overfit check: one phantom, enough epochs, training dice > 0.95") {
  TrainConfig cfg = seg_config();
  cfg.finetune_epochs = 150;
  cfg.finetune_lr_scale = 100.0;  // desk-scale supervised rate; see README
  cfg.batch_size = 1;
  std::vector<LabeledCase> train{phantom_case(30, 2, 32)};
  const std::string out = tmp_dir("overfit");
  FinetuneResult r = finetune(cfg, "", train, {}, out);
  SegModel m = SegModel::from_checkpoint(r.checkpoint_dir);
  LabelMap pred = sliding_window_infer(m, train[0].image, 32, 0.5, 1);
  const DiceTable t = dice_score(pred, train[0].labels);
  INFO("train dice ", t.mean);
  CHECK(t.mean > 0.95);
}

TEST_CASE("finetune rejects inconsistent label ranges") {
  TrainConfig cfg = seg_config();
  auto a = phantom_case(40, 2);
  auto b = phantom_case(41, 3);
  CHECK_THROWS(finetune(cfg, "", {a, b}, {}, tmp_dir("bad")));
  CHECK_THROWS(finetune(cfg, "", {}, {}, tmp_dir("empty")));
}

TEST_CASE("fold assignment is deterministic and respects k") {
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back("vol_" + std::to_string(i) + ".f32");
  auto folds = fold_assignment(ids, 5);
  auto again = fold_assignment(ids, 5);
  CHECK(folds == again);
  for (int f : folds) {
    CHECK(f >= 0);
    CHECK(f < 5);
  }
  // every fold non-empty for a reasonable id count
  std::array<int, 5> counts{};
  for (int f : folds) counts[static_cast<size_t>(f)]++;
  for (int c : counts) CHECK(c > 0);
}
