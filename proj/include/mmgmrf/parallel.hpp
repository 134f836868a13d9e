#pragma once

// Deterministic fork-join helpers. Work is split into fixed-size chunks whose
// results are combined in chunk order, so output does not depend on the
// number of threads.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mmgmrf {

/// Runs body(i) for i in [0, n) on up to `threads` threads.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Maps fixed-size chunks of [0, n) to partial results and folds them in
/// chunk order: acc = fold(acc, map(begin, end)).
template <class T, class Map, class Fold>
void chunked_reduce(std::size_t n, std::size_t chunk, unsigned threads, T& acc, Map&& map, Fold&& fold) {
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t chunks = (n + chunk - 1) / chunk;
  const std::size_t wave = std::max(1u, threads);
  for (std::size_t c0 = 0; c0 < chunks; c0 += wave) {
    const std::size_t c1 = std::min(chunks, c0 + wave);
    std::vector<T> parts(c1 - c0);
    parallel_for(c1 - c0, threads, [&](std::size_t k) {
      const std::size_t begin = (c0 + k) * chunk;
      parts[k] = map(begin, std::min(n, begin + chunk));
    });
    for (auto& p : parts) fold(acc, p);
  }
}

}  // namespace mmgmrf
