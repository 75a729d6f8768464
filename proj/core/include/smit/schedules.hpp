// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace smit {

struct ScheduleConfig {
  double lr0 = 2e-4;
  int64_t epochs = 400;
  int64_t warmup_epochs = 30;
  double momentum_start = 0.996;
  double momentum_end = 1.0;
  double tau_t_start = 0.04;
  double tau_t_end = 0.07;
  int64_t tau_t_warmup_epochs = 30;
  double tau_s = 0.1;

  void validate() const;
};

/// Teacher EMA momentum, cosine from momentum_start at step 0 to momentum_end
/// at step == total_steps. Monotone nondecreasing.
double momentum_schedule(int64_t step, int64_t total_steps, double start = 0.996, double end = 1.0);

/// Teacher temperature: linear warmup over the first warmup epochs, constant after.
double teacher_temp_schedule(int64_t epoch, const ScheduleConfig& cfg);

/// Learning rate: linear 0 -> lr0 over warmup_steps, then cosine lr0 -> 0.
double lr_schedule(int64_t step, int64_t total_steps, int64_t warmup_steps, double lr0);

}  // namespace smit
