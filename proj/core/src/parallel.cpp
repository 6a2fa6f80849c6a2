#include "xrec/parallel.hpp"

#include <atomic>

namespace xrec {

namespace {
std::atomic<int> g_threads{0};
}

void set_thread_count(int n) { g_threads.store(n, std::memory_order_relaxed); }

int thread_count() {
  int n = g_threads.load(std::memory_order_relaxed);
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, n);
}

}  // namespace xrec
