// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace treehmm {

// Runs run_block(b) for b in [0, n_blocks) on `threads` workers, worker w
// taking blocks w, w+threads, ... Block boundaries never depend on the
// thread count, so callers that merge per-block results in block order get
// results independent of `threads`.
inline void parallel_blocks(int n_blocks, int threads, const std::function<void(int)>& run_block) {
  if (threads <= 1 || n_blocks <= 1) {
    for (int b = 0; b < n_blocks; ++b) run_block(b);
    return;
  }
  int workers = std::min(threads, n_blocks);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int b = w; b < n_blocks; b += workers) run_block(b);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline constexpr int kTreeBlockSize = 64;

}  // namespace treehmm
