#include "embedkit/numeric.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace embedkit {

namespace {
std::atomic<std::uint32_t> g_worker_threads{1};
}  // namespace

void set_worker_threads(std::uint32_t n) {
  if (n < 1) {
    raise(ErrorKind::invalid_input, "worker threads must be >= 1");
  }
  g_worker_threads.store(n, std::memory_order_relaxed);
}

std::uint32_t worker_threads() {
  return g_worker_threads.load(std::memory_order_relaxed);
}

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t)>& fn) {
  const std::size_t workers =
      std::min<std::size_t>(worker_threads(), n == 0 ? 1 : n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    raise(ErrorKind::dimension, "dot: length mismatch (" +
                                    std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Vec64 l2_normalize(std::span<const double> v) {
  double n = l2_norm(v);
  if (n == 0.0) {
    raise(ErrorKind::degenerate_input, "l2_normalize: zero vector");
  }
  Vec64 out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    raise(ErrorKind::dimension, "cosine: length mismatch");
  }
  double na = l2_norm(a);
  double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) {
    raise(ErrorKind::degenerate_input, "cosine: zero vector");
  }
  double c = dot(a, b) / (na * nb);
  // Rounding can push |c| a few ulps past 1; clamp so downstream acos and
  // the [-1,1] contract hold exactly.
  return std::clamp(c, -1.0, 1.0);
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) {
    raise(ErrorKind::dimension, "log_sum_exp: empty input");
  }
  double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

Vec64 softmax(std::span<const double> xs) {
  if (xs.empty()) {
    raise(ErrorKind::dimension, "softmax: empty input");
  }
  double m = *std::max_element(xs.begin(), xs.end());
  Vec64 out(xs.size());
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = std::exp(xs[i] - m);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

}  // namespace embedkit
