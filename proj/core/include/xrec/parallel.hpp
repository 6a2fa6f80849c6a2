#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace xrec {

/// Process-wide worker count for data-parallel kernels. 0 restores the
/// hardware default. Results never depend on this setting: every output
/// element is owned by exactly one worker and accumulated in a fixed order.
void set_thread_count(int n);
int thread_count();

/// Static range split over [0, n). fn receives disjoint [begin, end) chunks.
template <typename F>
void parallel_for(std::int64_t n, F&& fn) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<std::int64_t>(thread_count(), n));
  if (workers <= 1) {
    fn(std::int64_t(0), n);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) {
    const std::int64_t begin = w * chunk;
    const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(std::int64_t(0), std::min<std::int64_t>(chunk, n));
  for (auto& t : pool) t.join();
}

}  // namespace xrec
