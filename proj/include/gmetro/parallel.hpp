#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gmetro {

/// Worker cap from GMETRO_NUM_WORKERS (default 1, never below 1).
inline int default_workers() {
  if (const char* env = std::getenv("GMETRO_NUM_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
/// written to slot i by the callee, so output order never depends on
/// scheduling. The first exception thrown is rethrown on the caller.
template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int count = workers < n ? workers : n;
  for (int t = 0; t < count; ++t) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace gmetro
