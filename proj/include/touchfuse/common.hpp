#pragma once

#include <cstdint>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace touchfuse {

// splitmix64; used for seed derivation so every consumer gets an
// independent, reproducible stream regardless of call order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return splitmix64(seed ^ splitmix64(v));
}

inline std::uint64_t hash_str(std::string_view s) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t index = 0) {
  return hash_combine(hash_combine(seed, hash_str(tag)), index);
}

// Deterministic RNG. Distributions are implemented by hand because the
// standard library's are implementation-defined; trajectories and datasets
// must replay bit-identically.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(splitmix64(seed)) {}

  std::uint64_t next_u64() {
    // xorshift64* on a splitmix-initialized state
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t uniform_int(std::uint64_t n) {  // [0, n)
    return n == 0 ? 0 : next_u64() % n;
  }

  // Box-Muller; one uniform pair per draw keeps the stream layout simple.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    u1 = u1 <= 0.0 ? 0x1.0p-53 : u1;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t state_;
};

// Worker count: explicit argument > TOUCHFUSE_THREADS > hardware concurrency.
int resolve_workers(int requested = 0);

// Runs fn(begin, end, worker_index) over [0, n) split into contiguous chunks.
// Chunking depends only on (n, workers) so reductions that combine per-chunk
// results in index order are reproducible for a fixed worker count.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t, std::size_t, int)>& fn);

}  // namespace touchfuse
