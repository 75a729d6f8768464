// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "smit/tensor.hpp"

namespace smit {

/// Ordered name -> tensor map holding one network's parameters. std::map keeps
/// iteration order stable, which makes optimizer updates, EMA sweeps and
/// serialization deterministic.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::vector<int64_t> shape);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return values_.count(name) != 0; }

  std::map<std::string, Tensor>& values() { return values_; }
  const std::map<std::string, Tensor>& values() const { return values_; }

  std::vector<std::string> names() const;
  int64_t total_params() const;

  /// Gaussian init (std per name category) seeded per parameter name, so the
  /// result does not depend on registration order.
  void init_random(uint64_t master_seed, double weight_std = 0.02);

 private:
  std::map<std::string, Tensor> values_;
};

/// Decoupled-weight-decay adaptive-moment optimizer over a ParamStore.
/// Teacher tensors are never registered here; the training step asserts that.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
  };

  AdamW(ParamStore& params, Options opt);

  /// Applies one update with the given learning rate. `grads` must hold one
  /// entry per registered parameter. Returns the pre-clip global grad norm.
  double step(std::map<std::string, Tensor>& grads, double lr, double clip_norm);

  const std::vector<std::string>& param_names() const { return names_; }
  int64_t step_count() const { return t_; }

  // Moment access for checkpointing.
  std::map<std::string, Tensor>& moments_m() { return m_; }
  std::map<std::string, Tensor>& moments_v() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

  /// Names whose entries skip weight decay (biases, norms, embeddings-like).
  static bool decays(const std::string& name);

 private:
  ParamStore& params_;
  Options opt_;
  std::vector<std::string> names_;
  std::map<std::string, Tensor> m_, v_;
  int64_t t_ = 0;
};

/// theta_t <- lambda * theta_t + (1 - lambda) * theta_s, elementwise, over the
/// intersection given by `names` (teacher must hold every name).
void ema_update(ParamStore& teacher, const ParamStore& student, const std::vector<std::string>& names,
                double lambda);

double global_grad_norm(const std::map<std::string, Tensor>& grads);

}  // namespace smit
