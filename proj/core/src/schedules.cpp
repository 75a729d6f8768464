// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/schedules.hpp"

#include <cmath>
#include <stdexcept>

namespace smit {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void ScheduleConfig::validate() const {
  if (epochs < 0 || warmup_epochs < 0 || warmup_epochs > epochs)
    throw std::invalid_argument("schedule: warmup must not exceed epochs");
  if (!(momentum_start <= momentum_end && momentum_end <= 1.0))
    throw std::invalid_argument("schedule: momentum must satisfy start <= end <= 1");
  if (!(lr0 > 0.0) || !(tau_s > 0.0) || !(tau_t_start > 0.0) || !(tau_t_end > 0.0))
    throw std::invalid_argument("schedule: rates and temperatures must be positive");
}

double momentum_schedule(int64_t step, int64_t total_steps, double start, double end) {
  if (total_steps <= 0) throw std::invalid_argument("momentum_schedule: total_steps must be > 0");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("momentum_schedule: step out of range");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return end - (end - start) * (1.0 + std::cos(kPi * t)) / 2.0;
}

double teacher_temp_schedule(int64_t epoch, const ScheduleConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("teacher_temp_schedule: epoch must be >= 0");
  if (cfg.tau_t_warmup_epochs <= 0 || epoch >= cfg.tau_t_warmup_epochs) return cfg.tau_t_end;
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.tau_t_warmup_epochs);
  return cfg.tau_t_start + (cfg.tau_t_end - cfg.tau_t_start) * t;
}

double lr_schedule(int64_t step, int64_t total_steps, int64_t warmup_steps, double lr0) {
  if (warmup_steps >= total_steps)
    throw std::invalid_argument("lr_schedule: warmup_steps must be < total_steps");
  if (step < warmup_steps)
    return lr0 * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return lr0 * (1.0 + std::cos(kPi * t)) / 2.0;
}

}  // namespace smit
