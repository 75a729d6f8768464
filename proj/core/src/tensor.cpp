// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace smit {

Tensor Tensor::reshaped(std::vector<int64_t> s) const {
  if (numel_of(s) != numel()) throw std::invalid_argument("reshape: element count mismatch");
  return Tensor(std::move(s), data);
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

void gemm_nn(double* C, const double* A, const double* B, int64_t n, int64_t k, int64_t m) {
  for (int64_t i = 0; i < n; ++i) {
    double* ci = C + i * m;
    const double* ai = A + i * k;
    for (int64_t l = 0; l < k; ++l) {
      const double a = ai[l];
      if (a == 0.0) continue;
      const double* bl = B + l * m;
      for (int64_t j = 0; j < m; ++j) ci[j] += a * bl[j];
    }
  }
}

void gemm_nt(double* C, const double* A, const double* B, int64_t n, int64_t k, int64_t m) {
  for (int64_t i = 0; i < n; ++i) {
    const double* ai = A + i * k;
    double* ci = C + i * m;
    for (int64_t j = 0; j < m; ++j) {
      const double* bj = B + j * k;
      double acc = 0.0;
      for (int64_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
      ci[j] += acc;
    }
  }
}

void gemm_tn(double* C, const double* A, const double* B, int64_t n, int64_t k, int64_t m) {
  for (int64_t i = 0; i < n; ++i) {
    const double* ai = A + i * k;
    const double* bi = B + i * m;
    for (int64_t l = 0; l < k; ++l) {
      const double a = ai[l];
      if (a == 0.0) continue;
      double* cl = C + l * m;
      for (int64_t j = 0; j < m; ++j) cl[j] += a * bi[j];
    }
  }
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace smit
