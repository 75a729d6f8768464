// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
//
// Gradient checks for every autodiff op against central finite differences.
// These are the oracle for everything the trainer builds on top.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "smit/graph.hpp"
#include "test_util.hpp"

using namespace smit;
using namespace smit::test;

namespace {

// Checks d(dot(op(params...), probe))/d(param) against FD for each listed param.
void check_grads(std::vector<Tensor*> inputs,
                 const std::function<Var(Graph&, std::vector<Var>&)>& build, uint64_t probe_seed,
                 double tol = 1e-6, int64_t max_checks = 30) {
  auto run = [&](std::map<std::string, Tensor>* grads_out) {
    Graph g;
    std::vector<Var> vars;
    for (size_t i = 0; i < inputs.size(); ++i)
      vars.push_back(g.param("p" + std::to_string(i), *inputs[i], true));
    Var out = build(g, vars);
    Var loss = out.val().numel() == 1
                   ? out
                   : dot_with(out, random_probe(out.val().shape, probe_seed));
    if (grads_out) {
      g.backward(loss);
      g.export_grads(*grads_out);
    }
    return loss.val().item();
  };

  std::map<std::string, Tensor> grads;
  run(&grads);
  Rng pick(probe_seed ^ 0xabcdef);
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor& x = *inputs[i];
    const auto& g = grads.at("p" + std::to_string(i));
    const int64_t n = x.numel();
    const int64_t checks = std::min<int64_t>(n, max_checks);
    for (int64_t c = 0; c < checks; ++c) {
      const auto j = static_cast<int64_t>(pick.below(static_cast<uint64_t>(n)));
      const double fd = central_fd([&]() { return run(nullptr); }, x, j);
      const double an = g[j];
      INFO("input ", i, " elem ", j, " analytic ", an, " fd ", fd);
      CHECK(rel_err(an, fd) < tol);
    }
  }
}

}  // namespace

TEST_CASE("add / add_scaled / scale / gelu") {
  Tensor a = random_tensor({3, 4}, 1), b = random_tensor({3, 4}, 2);
  check_grads({&a, &b}, [](Graph&, std::vector<Var>& v) { return add(v[0], v[1]); }, 11);
  check_grads({&a, &b}, [](Graph&, std::vector<Var>& v) { return add_scaled(v[0], v[1], -0.7); }, 12);
  check_grads({&a}, [](Graph&, std::vector<Var>& v) { return scale(v[0], 1.618); }, 13);
  check_grads({&a}, [](Graph&, std::vector<Var>& v) { return gelu(v[0]); }, 14);
}

TEST_CASE("linear") {
  Tensor x = random_tensor({5, 3}, 3), w = random_tensor({4, 3}, 4), b = random_tensor({4}, 5);
  check_grads({&x, &w, &b},
              [](Graph&, std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }, 15);
}

TEST_CASE("layernorm") {
  Tensor x = random_tensor({4, 6}, 6), g = random_tensor({6}, 7, 0.5, 1.5),
         b = random_tensor({6}, 8);
  check_grads({&x, &g, &b},
              [](Graph&, std::vector<Var>& v) { return layernorm(v[0], v[1], v[2], 6); }, 16, 2e-6);
}

TEST_CASE("bmm_nt and bmm_nn") {
  Tensor a = random_tensor({2, 3, 4}, 9), b = random_tensor({2, 5, 4}, 10);
  check_grads({&a, &b},
              [](Graph&, std::vector<Var>& v) { return bmm_nt(v[0], v[1], 2, 3, 4, 5); }, 17);
  Tensor c = random_tensor({2, 3, 4}, 11), d = random_tensor({2, 4, 5}, 12);
  check_grads({&c, &d},
              [](Graph&, std::vector<Var>& v) { return bmm_nn(v[0], v[1], 2, 3, 4, 5); }, 18);
}

TEST_CASE("softmax_rows with additive mask") {
  Tensor x = random_tensor({6, 5}, 13);
  check_grads({&x}, [](Graph&, std::vector<Var>& v) { return softmax_rows(v[0], 5); }, 19);
  auto mask = std::make_shared<Tensor>(Tensor::zeros({6, 5}));
  mask->data[2] = -1e30;
  mask->data[7] = -1e30;
  check_grads({&x},
              [mask](Graph&, std::vector<Var>& v) { return softmax_rows(v[0], 5, mask); }, 20);
  // rows sum to 1
  Graph g;
  Var p = softmax_rows(g.param("x", x, false), 5, mask);
  for (int64_t r = 0; r < 6; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 5; ++c) s += p.val()[r * 5 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gather ops, rows_where, embeddings, permute") {
  Tensor x = random_tensor({6, 3}, 21);
  auto idx = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{4, 0, 0, -1, 5});
  check_grads({&x}, [idx](Graph&, std::vector<Var>& v) { return gather_rows(v[0], idx, 3); }, 22);

  auto idx2 = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{1, 2, 0, -1});
  check_grads({&x},
              [idx2](Graph&, std::vector<Var>& v) { return gather_rows_concat(v[0], idx2, 2, 3); },
              23);

  Tensor e = random_tensor({3}, 24);
  auto rowmask = std::make_shared<const std::vector<uint8_t>>(
      std::vector<uint8_t>{1, 0, 0, 1, 1, 0});
  check_grads({&x, &e},
              [rowmask](Graph&, std::vector<Var>& v) { return rows_where(v[0], rowmask, v[1]); },
              25);

  Tensor table = random_tensor({4, 3}, 26);
  auto eidx = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{3, 3, 1, 0, 2, 1});
  check_grads({&x, &table},
              [eidx](Graph&, std::vector<Var>& v) { return add_rows_embed(v[0], v[1], eidx); }, 27);

  auto perm = std::make_shared<const std::vector<int64_t>>(
      std::vector<int64_t>{17, 3, -1, 0, 0, 9, 12, 5});
  check_grads({&x},
              [perm](Graph&, std::vector<Var>& v) { return permute_elements(v[0], perm, {8}); }, 28);
}

TEST_CASE("mean_rows, concat, transpose") {
  Tensor a = random_tensor({5, 3}, 29), b = random_tensor({5, 2}, 30);
  check_grads({&a}, [](Graph&, std::vector<Var>& v) { return mean_rows(v[0]); }, 31);
  check_grads({&a, &b}, [](Graph&, std::vector<Var>& v) { return concat_cols(v[0], v[1]); }, 32);
  Tensor c = random_tensor({4, 6}, 33);
  check_grads({&a, &c}, [](Graph&, std::vector<Var>& v) { return concat_rows(v[0], v[1]); }, 34);
  check_grads({&c}, [](Graph&, std::vector<Var>& v) { return transpose2d(v[0], 4, 6); }, 35);
}

TEST_CASE("conv3x3 / conv1x1 / transpose convs") {
  const int64_t D = 3, H = 4, W = 3;
  Tensor x = random_tensor({2, D, H, W}, 36);
  Tensor w3 = random_tensor({3, 2, 3, 3, 3}, 37);
  Tensor b3 = random_tensor({3}, 38);
  check_grads({&x, &w3, &b3},
              [=](Graph&, std::vector<Var>& v) { return conv3x3(v[0], v[1], v[2], 2, 3, D, H, W); },
              39, 1e-6, 20);

  Tensor w1 = random_tensor({3, 2}, 40), b1 = random_tensor({3}, 41);
  check_grads({&x, &w1, &b1},
              [=](Graph&, std::vector<Var>& v) {
                return conv1x1(v[0], v[1], v[2], 2, 3, D * H * W);
              },
              42);

  Tensor wt2 = random_tensor({2, 3, 2, 2, 2}, 43), bt2 = random_tensor({3}, 44);
  check_grads({&x, &wt2, &bt2},
              [=](Graph&, std::vector<Var>& v) {
                return conv_transpose2x(v[0], v[1], v[2], 2, 3, D, H, W);
              },
              45, 1e-6, 20);

  Tensor wt3 = random_tensor({2, 3, 3, 3, 3}, 46), bt3 = random_tensor({3}, 47);
  check_grads({&x, &wt3, &bt3},
              [=](Graph&, std::vector<Var>& v) {
                return conv_transpose3x(v[0], v[1], v[2], 2, 3, D, H, W);
              },
              48, 1e-6, 20);
}

TEST_CASE("transpose conv output sizes double the grid") {
  Graph g;
  Tensor x = random_tensor({2, 3, 3, 3}, 49);
  Tensor w2 = random_tensor({2, 4, 2, 2, 2}, 50), b2 = Tensor::zeros({4});
  Var y2 = conv_transpose2x(g.param("x", x, false), g.param("w", w2, false),
                            g.param("b", b2, false), 2, 4, 3, 3, 3);
  CHECK(y2.val().shape == std::vector<int64_t>{4, 6, 6, 6});
  Tensor w3 = random_tensor({2, 4, 3, 3, 3}, 51), b3 = Tensor::zeros({4});
  Var y3 = conv_transpose3x(g.param("x2", x, false), g.param("w2", w3, false),
                            g.param("b2", b3, false), 2, 4, 3, 3, 3);
  CHECK(y3.val().shape == std::vector<int64_t>{4, 6, 6, 6});
}

TEST_CASE("fused losses: l1_masked_mean, ce_vs_teacher, dice_ce") {
  Tensor pred = random_tensor({4, 5}, 52);
  auto target = std::make_shared<const Tensor>(random_tensor({4, 5}, 53));
  auto rm = std::make_shared<const std::vector<uint8_t>>(std::vector<uint8_t>{1, 0, 1, 1});
  check_grads({&pred},
              [=](Graph&, std::vector<Var>& v) { return l1_masked_mean(v[0], target, rm); }, 54);

  Tensor logits = random_tensor({3, 6}, 55);
  Tensor traw = random_tensor({3, 6}, 56);
  auto tprob = std::make_shared<Tensor>(traw);
  for (int64_t r = 0; r < 3; ++r) {
    double s = 0;
    for (int64_t k = 0; k < 6; ++k) {
      tprob->data[static_cast<size_t>(r * 6 + k)] =
          std::exp(tprob->data[static_cast<size_t>(r * 6 + k)]);
      s += tprob->data[static_cast<size_t>(r * 6 + k)];
    }
    for (int64_t k = 0; k < 6; ++k) tprob->data[static_cast<size_t>(r * 6 + k)] /= s;
  }
  auto rm2 = std::make_shared<const std::vector<uint8_t>>(std::vector<uint8_t>{1, 1, 0});
  check_grads({&logits},
              [=](Graph&, std::vector<Var>& v) { return ce_vs_teacher(v[0], tprob, 0.1, rm2); },
              57, 2e-6);

  const int64_t C = 3, V = 24;
  Tensor seg_logits = random_tensor({C, V}, 58);
  auto labels = std::make_shared<std::vector<uint16_t>>(static_cast<size_t>(V));
  Rng lr(59);
  for (auto& l : *labels) l = static_cast<uint16_t>(lr.below(C));
  check_grads({&seg_logits},
              [=](Graph&, std::vector<Var>& v) { return dice_ce_loss(v[0], labels, C, V, 0.5, 0.5); },
              60, 2e-6);
}

TEST_CASE("l1 empty mask gives exactly zero with zero gradient") {
  Graph g;
  Tensor pred = random_tensor({4, 5}, 61);
  auto target = std::make_shared<const Tensor>(random_tensor({4, 5}, 62));
  auto rm = std::make_shared<const std::vector<uint8_t>>(std::vector<uint8_t>{0, 0, 0, 0});
  Var p = g.param("p", pred, true);
  Var loss = l1_masked_mean(p, target, rm);
  CHECK(loss.val().item() == 0.0);
  g.backward(loss);
  std::map<std::string, Tensor> grads;
  g.export_grads(grads);
  // An absent entry means the parameter never received any gradient flow.
  if (grads.count("p"))
    for (double v : grads.at("p").data) CHECK(v == 0.0);
}

TEST_CASE("parameters reused across ops accumulate gradients once per use") {
  Tensor x = random_tensor({3, 3}, 63);
  check_grads({&x}, [](Graph& g, std::vector<Var>& v) { return add(v[0], v[0]); }, 64);
}

TEST_CASE("weighted_sum and dot_with") {
  Tensor a = random_tensor({2, 2}, 65), b = random_tensor({2, 2}, 66);
  auto w1 = random_probe({2, 2}, 67);
  auto w2 = random_probe({2, 2}, 68);
  check_grads({&a, &b},
              [=](Graph&, std::vector<Var>& v) {
                return weighted_sum({{0.3, dot_with(v[0], w1)}, {-1.7, dot_with(v[1], w2)}});
              },
              69);
}
