#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <utility>
#include <vector>

namespace metammf {

// Splits [0, n) into at most `threads` contiguous chunks and runs
// fn(begin, end, chunk) for each, chunk 0 on the calling thread. Chunk
// boundaries depend only on n and the thread count, so callers that reduce
// per-chunk results in chunk order are deterministic for a fixed count.
template <class Fn>
void parallel_chunks(std::size_t n, int threads, Fn&& fn) {
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1))));
  if (chunks == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  const std::size_t base = n / chunks;
  const std::size_t extra = n % chunks;
  auto bounds = [&](std::size_t c) {
    const std::size_t begin = c * base + std::min(c, extra);
    return std::pair{begin, begin + base + (c < extra ? 1 : 0)};
  };
  std::vector<std::exception_ptr> errors(chunks);
  std::vector<std::thread> workers;
  workers.reserve(chunks - 1);
  for (std::size_t c = 1; c < chunks; ++c) {
    workers.emplace_back([&, c] {
      try {
        const auto [b, e] = bounds(c);
        fn(b, e, c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  try {
    const auto [b, e] = bounds(0);
    fn(b, e, std::size_t{0});
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& w : workers) w.join();
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

inline std::size_t chunk_count(std::size_t n, int threads) {
  return std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1))));
}

}  // namespace metammf
