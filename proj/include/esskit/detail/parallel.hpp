#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace esskit::detail {

/// Worker count: ESSKIT_THREADS if set to a positive integer, otherwise the
/// hardware concurrency.
inline unsigned thread_limit() {
  if (const char* env = std::getenv("ESSKIT_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline thread_local bool in_parallel_region = false;

/// Runs body(i) for i in [0, n). Results must be written by index; callers
/// reduce afterwards in a fixed order, which keeps output independent of the
/// worker count. Nested calls run serially.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const std::size_t workers =
      in_parallel_region ? 1 : std::min<std::size_t>(thread_limit(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    in_parallel_region = true;
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
      }
    }
    in_parallel_region = false;
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
  }
  if (failure) std::rethrow_exception(failure);
}

/// Pairwise summation in a fixed tree order.
template <class T, class Add>
T pairwise_reduce(const std::vector<T>& values, std::size_t lo, std::size_t hi,
                  T zero, Add add) {
  if (hi <= lo) return zero;
  if (hi - lo == 1) return values[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return add(pairwise_reduce(values, lo, mid, zero, add),
             pairwise_reduce(values, mid, hi, zero, add));
}

}  // namespace esskit::detail
