#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace voxcade {

namespace detail {

inline std::atomic<int>& thread_override() {
  static std::atomic<int> v{0};
  return v;
}

// Set while a worker is inside a parallel_for chunk; nested calls run inline.
inline bool& in_parallel_region() {
  thread_local bool flag = false;
  return flag;
}

inline int env_threads() {
  if (const char* s = std::getenv("VOXCADE_THREADS")) {
    int n = std::atoi(s);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

}  // namespace detail

inline int max_threads() {
  int o = detail::thread_override().load(std::memory_order_relaxed);
  return o > 0 ? o : detail::env_threads();
}

// RAII worker-count override; scoped_thread_limit(1) forces sequential
// execution (used for timing runs and reproducible mode).
class scoped_thread_limit {
 public:
  explicit scoped_thread_limit(int n)
      : prev_(detail::thread_override().exchange(n > 0 ? n : 1)) {}
  ~scoped_thread_limit() { detail::thread_override().store(prev_); }
  scoped_thread_limit(const scoped_thread_limit&) = delete;
  scoped_thread_limit& operator=(const scoped_thread_limit&) = delete;

 private:
  int prev_;
};

// Runs fn(lo, hi) over disjoint chunks of [0, n). Each index is handled by
// exactly one worker and workers never share output locations, so results
// are bit-identical to a sequential run for any thread count.
template <class Fn>
void parallel_for(std::int64_t n, Fn&& fn, std::int64_t min_chunk = 1) {
  if (n <= 0) return;
  int threads = max_threads();
  if (min_chunk > 1) {
    threads = static_cast<int>(std::min<std::int64_t>(threads, (n + min_chunk - 1) / min_chunk));
  }
  threads = static_cast<int>(std::min<std::int64_t>(threads, n));
  if (threads <= 1 || detail::in_parallel_region()) {
    fn(std::int64_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  std::int64_t base = n / threads, rem = n % threads, lo = 0;
  for (int t = 0; t < threads; ++t) {
    std::int64_t hi = lo + base + (t < rem ? 1 : 0);
    pool.emplace_back([&fn, lo, hi] {
      detail::in_parallel_region() = true;
      fn(lo, hi);
      detail::in_parallel_region() = false;
    });
    lo = hi;
  }
  for (auto& th : pool) th.join();
}

}  // namespace voxcade
