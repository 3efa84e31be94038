#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "embedkit/errors.hpp"

namespace embedkit {

// Process-wide cap on worker threads for the embarrassingly parallel loops
// (filtering, mining, corpus embedding). 1 (the default) forces fully
// serial execution. Parallel loops write disjoint, index-addressed slots,
// so successful results are bitwise identical for any thread count.
void set_worker_threads(std::uint32_t n);
std::uint32_t worker_threads();

// Runs fn(0..n-1), strided across up to worker_threads() threads. The
// first captured exception (by worker index) is rethrown after all workers
// finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

using Vec64 = std::vector<double>;

// Row-major dense matrix of doubles.
struct Mat64 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec64 values;

  Mat64() = default;
  Mat64(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<double> row(std::size_t r) {
    return std::span<double>(values.data() + r * cols, cols);
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values.data() + r * cols, cols);
  }
};

struct Seed {
  std::uint64_t value = 0;
};

// splitmix64 stream generator. Fixed algorithm, bit-reproducible on every
// platform: state advances by the 64-bit golden-ratio increment and each
// draw is a finalizer over the new state. Doubles use the top 53 bits.
// Value-semantic: copying an Rng forks the exact stream position; split()
// derives an independent child stream.
class Rng {
 public:
  explicit Rng(Seed seed) : state_(seed.value) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // [lo, hi)
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    // Modulo bias is irrelevant at the scales used here (n << 2^64), and
    // keeps the draw identical across platforms.
    return next_u64() % n;
  }

  Rng split() {
    return Rng(Seed{next_u64() ^ 0xA5A5A5A55A5A5A5Aull});
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i + 1));
      std::swap(items[i], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
Vec64 l2_normalize(std::span<const double> v);
double cosine(std::span<const double> a, std::span<const double> b);
double log_sum_exp(std::span<const double> xs);
Vec64 softmax(std::span<const double> xs);

inline double dot(const Vec64& a, const Vec64& b) {
  return dot(std::span<const double>(a), std::span<const double>(b));
}
inline double cosine(const Vec64& a, const Vec64& b) {
  return cosine(std::span<const double>(a), std::span<const double>(b));
}

}  // namespace embedkit
