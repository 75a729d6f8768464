// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/params.hpp"

#include <cmath>
#include <stdexcept>

#include "smit/rng.hpp"

namespace smit {

Tensor& ParamStore::create(const std::string& name, std::vector<int64_t> shape) {
  auto [it, inserted] = values_.emplace(name, Tensor(std::move(shape)));
  if (!inserted) throw std::invalid_argument("parameter registered twice: " + name);
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("no such parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("no such parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& [k, v] : values_) n += v.numel();
  return n;
}

namespace {
bool ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}
}  // namespace

void ParamStore::init_random(uint64_t master_seed, double weight_std) {
  for (auto& [name, t] : values_) {
    Rng rng(derive_seed(master_seed, "init", fnv1a64(name)));
    if (ends_with(name, ".b") || ends_with(name, ".beta")) {
      for (auto& v : t.data) v = 0.0;
    } else if (ends_with(name, ".gamma")) {
      for (auto& v : t.data) v = 1.0;
    } else {
      for (auto& v : t.data) v = rng.normal(0.0, weight_std);
    }
  }
}

AdamW::AdamW(ParamStore& params, Options opt) : params_(params), opt_(opt) {
  for (const auto& [name, t] : params.values()) {
    names_.push_back(name);
    m_.emplace(name, Tensor::zeros(t.shape));
    v_.emplace(name, Tensor::zeros(t.shape));
  }
}

bool AdamW::decays(const std::string& name) {
  return !(ends_with(name, ".b") || ends_with(name, ".beta") || ends_with(name, ".gamma") ||
           name.find("pos_") != std::string::npos || name.find("mask_token") != std::string::npos);
}

double global_grad_norm(const std::map<std::string, Tensor>& grads) {
  double sq = 0.0;
  for (const auto& [k, g] : grads)
    for (double v : g.data) sq += v * v;
  return std::sqrt(sq);
}

double AdamW::step(std::map<std::string, Tensor>& grads, double lr, double clip_norm) {
  const double norm = global_grad_norm(grads);
  double gscale = 1.0;
  if (clip_norm > 0.0 && norm > clip_norm) gscale = clip_norm / norm;
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (const auto& name : names_) {
    Tensor& p = params_.at(name);
    auto git = grads.find(name);
    if (git == grads.end()) throw std::runtime_error("missing gradient for " + name);
    const Tensor& g = git->second;
    if (!g.same_shape(p)) throw std::runtime_error("gradient shape mismatch for " + name);
    Tensor& m = m_.at(name);
    Tensor& v = v_.at(name);
    const double wd = decays(name) ? opt_.weight_decay : 0.0;
    for (size_t i = 0; i < p.data.size(); ++i) {
      const double gi = g.data[i] * gscale;
      m.data[i] = opt_.beta1 * m.data[i] + (1.0 - opt_.beta1) * gi;
      v.data[i] = opt_.beta2 * v.data[i] + (1.0 - opt_.beta2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= lr * (mhat / (std::sqrt(vhat) + opt_.eps) + wd * p.data[i]);
    }
  }
  return norm;
}

void ema_update(ParamStore& teacher, const ParamStore& student, const std::vector<std::string>& names,
                double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("ema_update: lambda out of [0,1]");
  for (const auto& name : names) {
    Tensor& t = teacher.at(name);
    const Tensor& s = student.at(name);
    if (!t.same_shape(s)) throw std::runtime_error("ema_update: shape mismatch for " + name);
    for (size_t i = 0; i < t.data.size(); ++i)
      t.data[i] = lambda * t.data[i] + (1.0 - lambda) * s.data[i];
  }
}

}  // namespace smit
