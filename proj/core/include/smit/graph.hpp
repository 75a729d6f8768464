// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "smit/tensor.hpp"

namespace smit {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid as long as the graph lives.
struct Var {
  Graph* g = nullptr;
  int id = -1;
  const Tensor& val() const;
  bool valid() const { return g != nullptr && id >= 0; }
};

using IndexVec = std::shared_ptr<const std::vector<int64_t>>;
using ByteVec = std::shared_ptr<const std::vector<uint8_t>>;

/// Reverse-mode autodiff tape. Nodes are appended in forward order; backward()
/// walks them in reverse. Parameters are registered once per (graph, name) so
/// repeated use of a weight accumulates into a single gradient slot.
class Graph {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily on first touch
    bool requires_grad = false;
    bool grad_ready = false;
    std::string param_name;  // non-empty for trainable leaves
    std::function<void(Graph&, int)> backward;
  };

  std::vector<Node> nodes;

  Var constant(Tensor v);
  /// Trainable or frozen leaf bound to an external parameter tensor (copied in).
  Var param(const std::string& name, const Tensor& v, bool trainable);

  Tensor& grad_of(int id);
  const Tensor& value_of(int id) const { return nodes[static_cast<size_t>(id)].value; }

  /// Seeds d(root)=1 and runs the tape in reverse. root must be scalar.
  void backward(Var root);

  /// Sum exported parameter gradients into `out` keyed by parameter name.
  void export_grads(std::map<std::string, Tensor>& out) const;

  size_t num_nodes() const { return nodes.size(); }

 private:
  std::map<std::string, int> param_nodes_;
  int add_node(Tensor value, bool requires_grad);
  friend Var make_op(Graph& g, Tensor value, std::vector<int> parents,
                     std::function<void(Graph&, int)> bw);
};

// ---- elementwise / structural ops -----------------------------------------------------------

Var add(Var a, Var b);                       // same shape
Var add_scaled(Var a, Var b, double alpha);  // a + alpha * b
Var scale(Var a, double s);
Var gelu(Var x);  // exact erf form

// y = x * gamma + beta per row over trailing dim C, normalized to zero mean / unit variance.
Var layernorm(Var x, Var gamma, Var beta, int64_t C, double eps = 1e-5);

// (N,Ci) x (Co,Ci)^T + b -> (N,Co)
Var linear(Var x, Var W, Var b);

// Batched matmul. A viewed as (bat,n,k); B as (bat,m,k) for _nt / (bat,k,m) for _nn.
Var bmm_nt(Var A, Var B, int64_t bat, int64_t n, int64_t k, int64_t m);
Var bmm_nn(Var A, Var B, int64_t bat, int64_t n, int64_t k, int64_t m);

// Softmax over the trailing dimension of length `rowlen`; `addmask` (same shape
// or empty) is added to the logits first (used for shifted-window / pad masking).
Var softmax_rows(Var x, int64_t rowlen, std::shared_ptr<const Tensor> addmask = nullptr);

// Row gather: out[r,:] = x[idx[r],:]. idx entries of -1 produce zero rows.
Var gather_rows(Var x, IndexVec idx, int64_t C);

// Row gather + channel concat: out[r, j*C:(j+1)*C] = x[idx[r*k+j], :], -1 -> zeros.
Var gather_rows_concat(Var x, IndexVec idx, int64_t k, int64_t C);

// Rows with mask=1 are replaced by the (broadcast) row vector e.
Var rows_where(Var x, ByteVec row_mask, Var e);

// x + table[idx[r], :] per row (learned positional tables).
Var add_rows_embed(Var x, Var table, IndexVec idx);

Var mean_rows(Var x);                      // (N,C) -> (C,)
Var concat_cols(Var a, Var b);             // (N,Ca),(N,Cb) -> (N,Ca+Cb)
Var concat_rows(Var a, Var b);             // (Ra,C),(Rb,C) -> (Ra+Rb,C); flat [a;b]
Var transpose2d(Var x, int64_t R, int64_t C);  // (R,C) -> (C,R)

// Arbitrary element permutation/embedding: out.flat[i] = src_of_dst[i] >= 0 ? x.flat[src_of_dst[i]] : 0.
Var permute_elements(Var x, IndexVec src_of_dst, std::vector<int64_t> out_shape);

// ---- volumetric convolution ops (layout: (C, D, H, W) flattened) ----------------------------

Var conv3x3(Var x, Var W, Var b, int64_t Cin, int64_t Cout, int64_t D, int64_t H, int64_t Wd);
Var conv1x1(Var x, Var W, Var b, int64_t Cin, int64_t Cout, int64_t nvox);
// Transpose conv, kernel 2, stride 2: (Cin,D,H,W) -> (Cout,2D,2H,2W)
Var conv_transpose2x(Var x, Var W, Var b, int64_t Cin, int64_t Cout, int64_t D, int64_t H, int64_t Wd);
// Transpose conv, kernel 3, stride 2, output padding 1: (Cin,D,H,W) -> (Cout,2D,2H,2W)
Var conv_transpose3x(Var x, Var W, Var b, int64_t Cin, int64_t Cout, int64_t D, int64_t H, int64_t Wd);

// ---- fused losses ----------------------------------------------------------------------------

// Mean |pred - target| over the voxels of rows with row_mask=1; 0 if no row masked.
Var l1_masked_mean(Var pred, std::shared_ptr<const Tensor> target, ByteVec row_mask);

// Mean over masked rows of CE(teacher_probs_row, softmax(logits_row / tau_s)).
// teacher_probs rows must sum to 1 and carry no gradient.
Var ce_vs_teacher(Var logits, std::shared_ptr<const Tensor> teacher_probs, double tau_s,
                  ByteVec row_mask);

// w_dice * soft-Dice + w_ce * voxel cross-entropy on logits (C, V) vs labels (V).
Var dice_ce_loss(Var logits, std::shared_ptr<const std::vector<uint16_t>> labels, int64_t C,
                 int64_t V, double w_dice, double w_ce);

// Weighted sum of scalar vars.
Var weighted_sum(const std::vector<std::pair<double, Var>>& terms);

// <x, w> as a scalar (w constant). Handy for probing tensors in tests.
Var dot_with(Var x, std::shared_ptr<const Tensor> w);

}  // namespace smit
