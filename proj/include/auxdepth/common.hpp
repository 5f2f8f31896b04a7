#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace auxdepth {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

/// Single error type for the whole library; `kind` tells callers which
/// contract was violated.
struct Error : public std::runtime_error {
  enum class Kind {
    Dimension,
    Config,
    Geometry,
    Contract,
    Tape,
    Bounds,
    Parse,
    Decode,
    Eval,
    Generation,
    Io,
  };
  Kind kind;
  Error(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

[[noreturn]] inline void fail(Error::Kind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline Index numel_of(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

/// SplitMix64 stream. Every random draw in the project (weight init,
/// synthetic scenes, batch shuffles) comes from this generator so results
/// are identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Modulo bias is irrelevant at our n.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

/// Worker count for data-parallel loops. Parallel loops always partition the
/// index range statically and write disjoint outputs, so results are
/// bit-identical for every worker count.
inline int& worker_count() {
  static int count = 1;
  return count;
}

inline void set_worker_count(int n) { worker_count() = n < 1 ? 1 : n; }

template <typename F>
void parallel_for(Index n, F&& body) {
  const int workers = worker_count();
  if (workers <= 1 || n < 1024) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  const Index chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const Index begin = static_cast<Index>(w) * chunk;
    const Index end = begin + chunk < n ? begin + chunk : n;
    if (begin >= end) break;
    pool.emplace_back([begin, end, &body] {
      for (Index i = begin; i < end; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace auxdepth
