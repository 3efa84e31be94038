#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "embedkit/numeric.hpp"

using namespace embedkit;

TEST_SUITE("numeric") {

TEST_CASE("dot product matches a hand-computed value") {
  Vec64 a{1.0, 0.5, 2.0};
  Vec64 b{0.6, 2.0, 0.5};
  CHECK(dot(a, b) == doctest::Approx(2.6).epsilon(1e-15));
  CHECK(dot(Vec64{}, Vec64{}) == 0.0);
}

TEST_CASE("dot rejects mismatched lengths") {
  Vec64 a{1.0, 2.0};
  Vec64 b{1.0};
  CHECK_THROWS_WITH_AS(static_cast<void>(dot(a, b)),
                       doctest::Contains("length"), Error);
}

TEST_CASE("l2 norm and normalize") {
  Vec64 v{3.0, 4.0};
  CHECK(l2_norm(v) == 5.0);
  Vec64 u = l2_normalize(v);
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-15));

  Vec64 zero{0.0, 0.0};
  CHECK_THROWS_AS(l2_normalize(zero), Error);
  try {
    l2_normalize(zero);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate_input);
  }
}

TEST_CASE("cosine closed forms") {
  Vec64 x{1.0, 0.0};
  Vec64 y{1.0, 1.0};
  CHECK(cosine(x, y) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(cosine(x, Vec64{0.0, 2.0}) == 0.0);
  CHECK(cosine(y, y) == doctest::Approx(1.0).epsilon(1e-15));
  // Scale invariance.
  Vec64 y10{10.0, 10.0};
  CHECK(cosine(x, y10) == doctest::Approx(cosine(x, y)).epsilon(1e-15));
}

TEST_CASE("log_sum_exp matches the naive sum and shifts correctly") {
  Rng rng(Seed{11});
  for (int trial = 0; trial < 50; ++trial) {
    Vec64 xs(7);
    for (double& x : xs) x = rng.uniform(-4.0, 4.0);
    double naive = 0.0;
    for (double x : xs) naive += std::exp(x);
    CHECK(log_sum_exp(xs) == doctest::Approx(std::log(naive)).epsilon(1e-12));

    Vec64 shifted = xs;
    for (double& x : shifted) x += 123.0;
    CHECK(log_sum_exp(shifted) ==
          doctest::Approx(log_sum_exp(xs) + 123.0).epsilon(1e-12));
  }
  // No overflow for values that would overflow the naive sum.
  Vec64 big{1000.0, 1000.0};
  CHECK(log_sum_exp(big) ==
        doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("softmax closed form, normalization, shift invariance") {
  Vec64 xs{0.0, std::log(3.0)};
  Vec64 p = softmax(xs);
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(Seed{5});
  for (int trial = 0; trial < 20; ++trial) {
    Vec64 v(5);
    for (double& x : v) x = rng.uniform(-10.0, 10.0);
    Vec64 q = softmax(v);
    double total = 0.0;
    for (double x : q) total += x;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    Vec64 shifted = v;
    for (double& x : shifted) x -= 7.25;
    Vec64 qs = softmax(shifted);
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(qs[i] == doctest::Approx(q[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("rng streams are deterministic and value-semantic") {
  Rng a(Seed{123});
  Rng b(Seed{123});
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng fork = a;  // copies the stream position
  const std::uint64_t expected = b.next_u64();
  CHECK(fork.next_u64() == expected);
  // Copying forked the stream: the original still owes the same draw.
  CHECK(a.next_u64() == expected);

  Rng child = a.split();
  Rng sibling = b.split();
  CHECK(child.next_u64() == sibling.next_u64());
  // The child stream diverges from the parent's continuation.
  CHECK(a.next_u64() != child.next_u64());
}

TEST_CASE("rng draws stay in range") {
  Rng rng(Seed{7});
  for (int i = 0; i < 1000; ++i) {
    double d = rng.next_double();
    CHECK(d >= 0.0);
    CHECK(d < 1.0);
    CHECK(rng.next_below(13) < 13);
  }
}

TEST_CASE("shuffle is a deterministic permutation") {
  std::vector<int> items(40);
  for (int i = 0; i < 40; ++i) items[i] = i;
  std::vector<int> once = items;
  Rng r1(Seed{9});
  r1.shuffle(once);
  std::vector<int> twice = items;
  Rng r2(Seed{9});
  r2.shuffle(twice);
  CHECK(once == twice);
  CHECK(once != items);  // 40 elements: identity is astronomically unlikely
  std::vector<int> sorted = once;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == items);
}

TEST_CASE("parallel_for matches serial execution for any thread count") {
  const std::size_t n = 257;
  std::vector<double> serial(n), parallel(n);
  set_worker_threads(1);
  parallel_for(n, [&](std::size_t i) {
    serial[i] = std::sin(static_cast<double>(i)) * 1e-3;
  });
  set_worker_threads(5);
  parallel_for(n, [&](std::size_t i) {
    parallel[i] = std::sin(static_cast<double>(i)) * 1e-3;
  });
  set_worker_threads(1);
  CHECK(serial == parallel);  // bitwise: disjoint slots, same expression
}

TEST_CASE("parallel_for rethrows the first worker exception") {
  set_worker_threads(4);
  CHECK_THROWS_WITH_AS(
      parallel_for(64,
                   [](std::size_t i) {
                     if (i == 17) raise(ErrorKind::invalid_input, "boom");
                   }),
      "boom", Error);
  set_worker_threads(1);
}

TEST_CASE("worker thread count is validated") {
  CHECK_THROWS_AS(set_worker_threads(0), Error);
  set_worker_threads(3);
  CHECK(worker_threads() == 3);
  set_worker_threads(1);
}

}  // TEST_SUITE
