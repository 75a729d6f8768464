// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace smit {

inline int64_t pick_threads(int64_t configured, int64_t items) {
  int64_t t = configured > 0 ? configured
                             : static_cast<int64_t>(std::thread::hardware_concurrency());
  if (t < 1) t = 1;
  return std::min(t, items);
}

/// Runs fn(i) for i in [0,n), striped across up to `threads` workers. Each item
/// must write only its own output slot; callers reduce in index order, so the
/// result is independent of thread count and scheduling.
template <class Fn>
void parallel_items(int64_t n, int64_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int64_t w = 0; w < threads; ++w)
    pool.emplace_back([&fn, w, n, threads]() {
      for (int64_t i = w; i < n; i += threads) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace smit
