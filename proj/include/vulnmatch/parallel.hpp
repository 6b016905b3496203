#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace vulnmatch {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [begin, end) across up to `threads` workers. Work is
// sharded by index stride, so identical inputs produce identical per-index
// results regardless of thread count; callers that accumulate must do so into
// per-index slots and reduce in index order afterwards.
template <typename Fn>
void parallel_for(size_t begin, size_t end, int threads, Fn&& fn) {
  size_t count = end > begin ? end - begin : 0;
  if (count == 0) return;
  int nthreads = std::min<size_t>(resolve_threads(threads), count);
  if (nthreads <= 1) {
    for (size_t i = begin; i < end; ++i) fn(i);
    return;
  }

  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (int t = 0; t < nthreads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (size_t i = begin + static_cast<size_t>(t); i < end;
             i += static_cast<size_t>(nthreads)) {
          fn(i);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace vulnmatch
