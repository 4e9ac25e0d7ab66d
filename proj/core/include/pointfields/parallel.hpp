// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace pf {

/// Number of worker threads used by parallel_for. Determinism of results is
/// the callers' responsibility: workers write disjoint ranges and reductions
/// merge per-chunk buffers in chunk order.
inline unsigned worker_threads() {
  static unsigned n = std::max(1u, std::min(8u, std::thread::hardware_concurrency()));
  return n;
}

/// Runs fn(begin, end, chunk_index) over [0, n) split into contiguous chunks,
/// one per worker. Falls back to a direct call for small n.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn, size_t min_grain = 256) {
  const unsigned workers = worker_threads();
  if (n == 0) return;
  if (workers <= 1 || n < 2 * min_grain) {
    fn(size_t{0}, n, size_t{0});
    return;
  }
  const size_t chunks = std::min<size_t>(workers, (n + min_grain - 1) / min_grain);
  const size_t step = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  for (size_t c = 0; c < chunks; ++c) {
    const size_t b = c * step;
    const size_t e = std::min(n, b + step);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e, c] { fn(b, e, c); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace pf
