#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace flowvip {

/// Worker cap from FLOWVIP_THREADS (read once), else hardware concurrency.
int worker_count();

/// Runs f(begin, end) over disjoint chunks of [0, n). Chunks are written by
/// exactly one worker, so results do not depend on the worker count as long
/// as f only writes inside its own range.
template <typename F>
void parallel_for(int64_t n, int64_t min_chunk, F&& f) {
  const int workers = worker_count();
  if (workers <= 1 || n < 2 * min_chunk) {
    f(int64_t{0}, n);
    return;
  }
  const int64_t chunks = std::min<int64_t>(workers, n / min_chunk);
  const int64_t per = (n + chunks - 1) / chunks;
  std::vector<std::jthread> pool;
  for (int64_t c = 1; c < chunks; ++c) {
    const int64_t b = c * per, e = std::min(n, b + per);
    if (b < e) pool.emplace_back([&f, b, e] { f(b, e); });
  }
  f(int64_t{0}, std::min(n, per));
}

}  // namespace flowvip
