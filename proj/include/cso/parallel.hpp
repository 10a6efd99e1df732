#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cso {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Callers write
/// results into slot i so the output never depends on completion order.
/// The first exception thrown by any task is rethrown on the caller.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t count = std::min(threads, n);
  pool.reserve(count);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace cso

namespace cso {

/// Sums per-item dense contributions into a buffer of `width` doubles.
/// Items are grouped into fixed blocks of `kBlock` and blocks are combined
/// by a pairwise tree over block index, so the floating-point result is
/// identical for every worker count.
template <typename Fn>
std::vector<double> deterministic_sum(std::size_t items, std::size_t width, int workers, Fn&& add_item) {
  constexpr std::size_t kBlock = 16;
  const std::size_t blocks = (items + kBlock - 1) / kBlock;
  if (blocks == 0) return std::vector<double>(width, 0.0);
  std::vector<std::vector<double>> partial(blocks);
  parallel_for(blocks, workers, [&](std::size_t b) {
    std::vector<double> acc(width, 0.0);
    const std::size_t end = std::min(items, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i) add_item(i, acc);
    partial[b] = std::move(acc);
  });
  for (std::size_t stride = 1; stride < blocks; stride *= 2) {
    for (std::size_t b = 0; b + stride < blocks; b += 2 * stride) {
      auto& into = partial[b];
      const auto& from = partial[b + stride];
      for (std::size_t k = 0; k < width; ++k) into[k] += from[k];
    }
  }
  return std::move(partial[0]);
}

}  // namespace cso
