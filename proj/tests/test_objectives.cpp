// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smit/objectives.hpp"
#include "smit/rng.hpp"
#include "test_util.hpp"

using namespace smit;
using namespace smit::test;

namespace {
double entropy_of(const std::vector<double>& p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}
}  // namespace

TEST_CASE("sharpen: uniform on equal logits, logistic closed form, centering") {
  Tensor eq = Tensor::full({1, 8}, 3.25);
  Tensor p = sharpen(eq, 0.07);
  for (double v : p.data) CHECK(v == doctest::Approx(0.125).epsilon(1e-12));

  Tensor two({1, 2});
  two.data = {1.0, 0.0};
  Tensor q = sharpen(two, 0.1);
  const double sigma10 = 1.0 / (1.0 + std::exp(-10.0));
  CHECK(q.data[0] == doctest::Approx(sigma10).epsilon(1e-9));
  CHECK(q.data[1] == doctest::Approx(1.0 - sigma10).epsilon(1e-9));
  CHECK(q.data[0] == doctest::Approx(0.9999546).epsilon(1e-6));

  // center equal to the logits themselves -> uniform
  Tensor l = random_tensor({1, 6}, 1);
  Tensor c = l.reshaped({6});
  Tensor u = sharpen(l, 0.04, &c);
  for (double v : u.data) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-12));

  CHECK_THROWS(sharpen(l, 0.0));
  Tensor bad = l;
  bad.data[2] = std::numeric_limits<double>::infinity();
  CHECK_THROWS(sharpen(bad, 0.1));
}

TEST_CASE("sharpen rows sum to 1 and are strictly positive (property)") {
  for (uint64_t s = 0; s < 50; ++s) {
    Tensor l = random_tensor({7, 16}, 100 + s, -0.7, 0.7);
    Tensor p = sharpen(l, s % 2 ? 0.04 : 0.1);
    for (int64_t r = 0; r < 7; ++r) {
      double sum = 0;
      for (int64_t k = 0; k < 16; ++k) {
        const double v = p[r * 16 + k];
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
  // Extreme logit spreads may underflow to exactly zero but never go negative
  // and still sum to 1.
  Tensor wide = random_tensor({4, 16}, 999, -200.0, 200.0);
  Tensor p = sharpen(wide, 0.04);
  for (int64_t r = 0; r < 4; ++r) {
    double sum = 0;
    for (int64_t k = 0; k < 16; ++k) {
      CHECK(p[r * 16 + k] >= 0.0);
      sum += p[r * 16 + k];
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("mip_loss: zero residual, empty mask, constant offset") {
  Graph g;
  auto target = std::make_shared<const Tensor>(random_tensor({4, 8}, 2));
  Var pred_eq = g.constant(*target);
  MaskVector m;
  m.m = {1, 0, 1, 0};
  CHECK(mip_loss(pred_eq, target, m).val().item() == 0.0);

  MaskVector zero;
  zero.m = {0, 0, 0, 0};
  Var pred_any = g.constant(random_tensor({4, 8}, 3));
  CHECK(mip_loss(pred_any, target, zero).val().item() == 0.0);

  // one masked block with constant residual c -> |c|
  Tensor shifted = *target;
  const double c = -0.731;
  for (auto& v : shifted.data) v += c;
  Var pred_c = g.constant(shifted);
  MaskVector one;
  one.m = {0, 1, 0, 0};
  CHECK(mip_loss(pred_c, target, one).val().item() == doctest::Approx(std::abs(c)).epsilon(1e-12));
}

TEST_CASE("mip_loss ignores targets at unmasked positions (exact invariance)") {
  Graph g;
  Tensor t1 = random_tensor({6, 5}, 4);
  Tensor t2 = t1;
  MaskVector m;
  m.m = {1, 0, 0, 1, 0, 1};
  Rng rng(5);
  for (int64_t r = 0; r < 6; ++r) {
    if (m.m[static_cast<size_t>(r)]) continue;
    for (int64_t c = 0; c < 5; ++c) t2.data[static_cast<size_t>(r * 5 + c)] = rng.uniform(-9, 9);
  }
  Tensor predt = random_tensor({6, 5}, 6);
  Var pred = g.constant(predt);
  const double a = mip_loss(pred, std::make_shared<const Tensor>(t1), m).val().item();
  const double b = mip_loss(pred, std::make_shared<const Tensor>(t2), m).val().item();
  CHECK(a == b);
}

TEST_CASE("mpd_loss: CE(p,p)=H(p), uniform teacher bound, one-hot closed form") {
  SharpenParams sp;
  sp.tau_s = 0.1;
  sp.tau_t = 0.1;

  // identical logits, equal temperatures, no center -> H(p)
  Graph g;
  Tensor logits = random_tensor({3, 8}, 7);
  MaskVector m;
  m.m = {1, 1, 1};
  Var sl = g.constant(logits);
  const double loss = mpd_loss(sl, logits, m, sp).val().item();
  Tensor probs = sharpen(logits, 0.1);
  double h = 0;
  for (int64_t r = 0; r < 3; ++r) {
    std::vector<double> row(probs.data.begin() + r * 8, probs.data.begin() + (r + 1) * 8);
    h += entropy_of(row);
  }
  h /= 3.0;
  CHECK(loss == doctest::Approx(h).epsilon(1e-10));

  // uniform teacher -> loss >= log K, equality iff student uniform
  const int64_t K = 8;
  Tensor t_uniform_logits = Tensor::zeros({2, K});
  Tensor s_uniform = Tensor::zeros({2, K});
  MaskVector m2;
  m2.m = {1, 1};
  Var su = g.constant(s_uniform);
  CHECK(mpd_loss(su, t_uniform_logits, m2, sp).val().item() ==
        doctest::Approx(std::log(static_cast<double>(K))).epsilon(1e-10));
  Var sr = g.constant(random_tensor({2, K}, 8));
  CHECK(mpd_loss(sr, t_uniform_logits, m2, sp).val().item() >=
        std::log(static_cast<double>(K)) - 1e-12);

  // K=2 near-one-hot teacher vs uniform student -> log 2
  SharpenParams sharp;
  sharp.tau_s = 0.1;
  sharp.tau_t = 0.001;  // sharp enough that teacher is (1,0) to double precision
  Tensor t2({1, 2});
  t2.data = {1.0, 0.0};
  Tensor s2 = Tensor::zeros({1, 2});
  MaskVector m3;
  m3.m = {1};
  Var s2v = g.constant(s2);
  CHECK(mpd_loss(s2v, t2, m3, sharp).val().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("mpd_loss is invariant to student logits at unmasked positions") {
  SharpenParams sp;
  sp.tau_s = 0.1;
  sp.tau_t = 0.05;
  Graph g;
  Tensor teacher = random_tensor({5, 6}, 9);
  Tensor s1 = random_tensor({5, 6}, 10);
  Tensor s2 = s1;
  MaskVector m;
  m.m = {1, 0, 1, 0, 0};
  Rng rng(11);
  for (int64_t r = 0; r < 5; ++r) {
    if (m.m[static_cast<size_t>(r)]) continue;
    for (int64_t c = 0; c < 6; ++c) s2.data[static_cast<size_t>(r * 6 + c)] = rng.uniform(-4, 4);
  }
  const double a = mpd_loss(g.constant(s1), teacher, m, sp).val().item();
  const double b = mpd_loss(g.constant(s2), teacher, m, sp).val().item();
  CHECK(a == b);
}

TEST_CASE("itd_loss: CE(p,p)=H(p), uniform student gives log K, K=4 closed form") {
  SharpenParams sp;
  sp.tau_s = 0.1;
  sp.tau_t = 0.1;
  Graph g;
  Tensor logits = random_tensor({1, 8}, 12);
  const double loss = itd_loss(g.constant(logits), logits.reshaped({8}), sp).val().item();
  Tensor p = sharpen(logits, 0.1);
  CHECK(loss == doctest::Approx(entropy_of(p.data)).epsilon(1e-10));

  // uniform student -> log K for any teacher
  const int64_t K = 4;
  Tensor s_uniform = Tensor::zeros({1, K});
  Tensor teacher = random_tensor({K}, 13, -2, 2);
  CHECK(itd_loss(g.constant(s_uniform), teacher, sp).val().item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-10));

  // teacher (0.7,0.1,0.1,0.1), student uniform -> log 4 = 1.3863
  CHECK(std::log(4.0) == doctest::Approx(1.3863).epsilon(1e-4));
}

TEST_CASE("Gibbs: CE is minimized at student == teacher (100 random K=8 instances)") {
  SharpenParams sp;
  sp.tau_s = 1.0;  // direct softmax so we can place the student exactly at p_t
  sp.tau_t = 1.0;
  Graph g;
  MaskVector m;
  m.m = {1};
  for (uint64_t trial = 0; trial < 100; ++trial) {
    Tensor t_logits = random_tensor({1, 8}, 1000 + trial, -3, 3);
    const double at_teacher = mpd_loss(g.constant(t_logits), t_logits, m, sp).val().item();
    for (int alt = 0; alt < 5; ++alt) {
      Tensor s_logits = random_tensor({1, 8}, 5000 + trial * 7 + static_cast<uint64_t>(alt), -3, 3);
      const double other = mpd_loss(g.constant(s_logits), t_logits, m, sp).val().item();
      CHECK(other >= at_teacher - 1e-12);
    }
  }
}

TEST_CASE("symmetrized_total: swap invariance, weight zeroing, decomposition identity") {
  const int64_t N = 4, K = 6, D = 10;
  Graph g;
  StudentViewOut su, sv;
  su.pred_blocks = g.constant(random_tensor({N, D}, 20));
  sv.pred_blocks = g.constant(random_tensor({N, D}, 21));
  su.patch_logits = g.constant(random_tensor({N, K}, 22));
  sv.patch_logits = g.constant(random_tensor({N, K}, 23));
  su.cls_logits = g.constant(random_tensor({1, K}, 24));
  sv.cls_logits = g.constant(random_tensor({1, K}, 25));
  su.target_blocks = std::make_shared<const Tensor>(random_tensor({N, D}, 26));
  sv.target_blocks = std::make_shared<const Tensor>(random_tensor({N, D}, 27));
  su.mask.m = {1, 0, 1, 0};
  sv.mask.m = {0, 1, 1, 0};
  TeacherViewOut tu, tv;
  tu.patch_logits = random_tensor({N, K}, 28);
  tv.patch_logits = random_tensor({N, K}, 29);
  tu.cls_logits = random_tensor({K}, 30);
  tv.cls_logits = random_tensor({K}, 31);
  SharpenParams sp;
  sp.tau_s = 0.1;
  sp.tau_t = 0.06;

  LossVars a = symmetrized_total(g, su, sv, &tu, &tv, sp, 0.1, 0.1);
  LossVars b = symmetrized_total(g, sv, su, &tv, &tu, sp, 0.1, 0.1);  // swap (u,m) with (v,m')
  CHECK(a.mip.val().item() == doctest::Approx(b.mip.val().item()).epsilon(1e-12));
  CHECK(a.mpd.val().item() == doctest::Approx(b.mpd.val().item()).epsilon(1e-12));
  CHECK(a.itd.val().item() == doctest::Approx(b.itd.val().item()).epsilon(1e-12));
  CHECK(a.total.val().item() == doctest::Approx(b.total.val().item()).epsilon(1e-12));

  LossVars z = symmetrized_total(g, su, sv, &tu, &tv, sp, 0.0, 0.0);
  CHECK(z.total.val().item() == z.mip.val().item());

  const double lhs = a.total.val().item();
  const double rhs = a.mip.val().item() + 0.1 * a.mpd.val().item() + 0.1 * a.itd.val().item();
  CHECK(std::abs(lhs - rhs) <= 1e-6 * std::max(1.0, std::abs(rhs)));

  // degenerate smoke case: u == v, identical masks -> all fields finite
  LossVars d = symmetrized_total(g, su, su, &tu, &tu, sp, 0.1, 0.1);
  CHECK(std::isfinite(d.total.val().item()));
}

TEST_CASE("update_center: full replacement, one-step arithmetic, geometric fixed point") {
  Tensor c = Tensor::zeros({4});
  Tensor batch({3, 4});
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t k = 0; k < 4; ++k) batch.data[static_cast<size_t>(r * 4 + k)] = 1.0;

  update_center(c, batch, 0.0);
  for (double v : c.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));

  Tensor c2 = Tensor::zeros({4});
  update_center(c2, batch, 0.9);
  for (double v : c2.data) CHECK(v == doctest::Approx(0.1).epsilon(1e-12));

  // constant logits L over many steps: center -> L geometrically
  Tensor c3 = Tensor::zeros({4});
  for (int i = 0; i < 300; ++i) update_center(c3, batch, 0.9);
  for (double v : c3.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-10));

  CHECK_THROWS(update_center(c3, batch, 1.0));
}

TEST_CASE("loss gradients w.r.t. student inputs match finite differences") {
  SharpenParams sp;
  sp.tau_s = 0.1;
  sp.tau_t = 0.05;
  sp.center_patch = random_tensor({6}, 40);
  Tensor teacher = random_tensor({5, 6}, 41);
  MaskVector m;
  m.m = {1, 0, 1, 1, 0};
  Tensor student = random_tensor({5, 6}, 42);

  auto eval_mpd = [&](std::map<std::string, Tensor>* grads) {
    Graph g;
    Var s = g.param("s", student, true);
    Var loss = mpd_loss(s, teacher, m, sp);
    if (grads) {
      g.backward(loss);
      g.export_grads(*grads);
    }
    return loss.val().item();
  };
  std::map<std::string, Tensor> grads;
  eval_mpd(&grads);
  Rng pick(43);
  for (int c = 0; c < 10; ++c) {
    const auto j = static_cast<int64_t>(pick.below(30));
    const double fd = central_fd([&]() { return eval_mpd(nullptr); }, student, j);
    CHECK(rel_err(grads.at("s")[j], fd) < 1e-4);
  }

  // MIP gradient (L1 subgradient away from ties)
  auto target = std::make_shared<const Tensor>(random_tensor({5, 6}, 44));
  Tensor pred = random_tensor({5, 6}, 45);
  auto eval_mip = [&](std::map<std::string, Tensor>* grads2) {
    Graph g;
    Var p = g.param("p", pred, true);
    Var loss = mip_loss(p, target, m);
    if (grads2) {
      g.backward(loss);
      g.export_grads(*grads2);
    }
    return loss.val().item();
  };
  std::map<std::string, Tensor> g2;
  eval_mip(&g2);
  for (int c = 0; c < 10; ++c) {
    const auto j = static_cast<int64_t>(pick.below(30));
    const double fd = central_fd([&]() { return eval_mip(nullptr); }, pred, j);
    CHECK(rel_err(g2.at("p")[j], fd) < 1e-4);
  }
}

TEST_CASE("teacher logits are constants: no gradient path exists") {
  SharpenParams sp;
  sp.tau_s = 0.1;
  sp.tau_t = 0.05;
  Graph g;
  Tensor teacher = random_tensor({3, 4}, 50);
  Tensor student = random_tensor({3, 4}, 51);
  MaskVector m;
  m.m = {1, 1, 0};
  // The teacher enters as a plain tensor; only the student leaf can appear in
  // the gradient export.
  Var s = g.param("student", student, true);
  Var loss = mpd_loss(s, teacher, m, sp);
  g.backward(loss);
  std::map<std::string, Tensor> grads;
  g.export_grads(grads);
  CHECK(grads.size() == 1);
  CHECK(grads.count("student") == 1);
}
