#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rave {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Workers pull the next
/// index from a shared counter, so uneven items balance themselves. Callers
/// write results into slot i, which keeps output order independent of
/// scheduling. The first exception thrown is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i; !stop.load(std::memory_order_relaxed) && (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
        stop = true;
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(jobs - 1);
  for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (first) std::rethrow_exception(first);
}

}  // namespace rave
