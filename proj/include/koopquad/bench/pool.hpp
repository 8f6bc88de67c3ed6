#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace koopquad::bench {

/// Runs fn(0..n-1) on up to `jobs` threads. Results land at their own index,
/// so the output does not depend on scheduling. The first exception thrown
/// by any task is rethrown after all workers join.
template <typename R>
[[nodiscard]] std::vector<R> parallel_map(std::size_t n, unsigned jobs,
                                          const std::function<R(std::size_t)>& fn) {
  std::vector<R> out(n);
  if (n == 0) return out;
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (unsigned w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          out[i] = fn(i);
        } catch (...) {
          std::lock_guard lk(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (err) std::rethrow_exception(err);
  return out;
}

}  // namespace koopquad::bench
