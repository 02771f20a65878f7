#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace tde {

/// Worker count: TDE_THREADS if set and positive, else the hardware concurrency.
inline int thread_count() {
  if (const char *s = std::getenv("TDE_THREADS")) {
    try {
      const int n = std::stoi(s);
      if (n > 0) return n;
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [begin, end) over contiguous blocks. Each index is
/// visited exactly once, so callers writing to disjoint slots get results
/// independent of the thread count. The first exception is rethrown.
inline void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)> &body,
                         int threads = 0) {
  if (end <= begin) return;
  const std::size_t n = end - begin;
  std::size_t nt = static_cast<std::size_t>(threads > 0 ? threads : thread_count());
  nt = std::min(nt, n);
  if (nt <= 1) {
    for (std::size_t i = begin; i < end; ++i) body(i);
    return;
  }
  std::exception_ptr err;
  std::mutex m;
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + nt - 1) / nt;
  for (std::size_t t = 0; t < nt; ++t) {
    const std::size_t lo = begin + t * chunk, hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        std::lock_guard g(m);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto &th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace tde
