// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace smit {

/// Dense row-major tensor of doubles. All training math runs in 64-bit so
/// gradients can be validated against central finite differences.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) { data.assign(numel_of(shape), 0.0); }
  Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape[i]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  double item() const { return data.at(0); }

  /// Reinterpret with a new shape of identical element count.
  Tensor reshaped(std::vector<int64_t> s) const;

  std::string shape_str() const;
};

// Flat-kernel GEMM helpers shared by the autodiff ops. All accumulate into C.
void gemm_nn(double* C, const double* A, const double* B, int64_t n, int64_t k, int64_t m);  // C(n,m)+=A(n,k)B(k,m)
void gemm_nt(double* C, const double* A, const double* B, int64_t n, int64_t k, int64_t m);  // C(n,m)+=A(n,k)B(m,k)^T
void gemm_tn(double* C, const double* A, const double* B, int64_t n, int64_t k, int64_t m);  // C(k,m)+=A(n,k)^T B(n,m)

bool all_finite(const Tensor& t);

}  // namespace smit
