#include "touchfuse/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <mutex>

namespace touchfuse {

int resolve_workers(int requested) {
  int n = requested;
  if (n <= 0) {
    if (const char* env = std::getenv("TOUCHFUSE_THREADS")) {
      n = std::atoi(env);
    }
  }
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("TOUCHFUSE_THREADS")) {
    int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t, std::size_t, int)>& fn) {
  workers = std::max(1, workers);
  if (workers == 1 || n <= 1) {
    fn(0, n, 0);
    return;
  }
  const std::size_t w = static_cast<std::size_t>(workers);
  const std::size_t chunk = (n + w - 1) / w;
  std::vector<std::thread> pool;
  pool.reserve(w);
  std::exception_ptr first_error;
  std::mutex error_mu;
  for (std::size_t i = 0; i < w; ++i) {
    const std::size_t begin = std::min(n, i * chunk);
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end, i] {
      try {
        fn(begin, end, static_cast<int>(i));
      } catch (...) {
        std::scoped_lock lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace touchfuse
