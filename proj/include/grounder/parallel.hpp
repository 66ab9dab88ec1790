#ifndef GROUNDER_PARALLEL_HPP_
#define GROUNDER_PARALLEL_HPP_

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace grounder {

// Runs fn(i) for i in [0, n) over up to `threads` workers. Each result lands
// in its own slot, so the output is independent of scheduling. The first
// worker exception (in worker order) is rethrown after all workers join.
template <typename R, typename F>
std::vector<R> map_indices(std::size_t n, int threads, F fn) {
  std::vector<R> out(n);
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace grounder

#endif  // GROUNDER_PARALLEL_HPP_
