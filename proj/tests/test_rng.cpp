#include "doctest.h"

#include <cmath>

#include "bcrl/rng.hpp"

using namespace bcrl;

TEST_CASE("splitmix is deterministic and split streams differ") {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  SplitMix64 parent(7);
  SplitMix64 c1 = parent.split(1);
  SplitMix64 c2 = parent.split(2);
  SplitMix64 c1_again = parent.split(1);
  CHECK(c1.next_u64() == c1_again.next_u64());
  CHECK(c1.next_u64() != c2.next_u64());
  // split does not advance the parent
  SplitMix64 parent2(7);
  CHECK(parent.next_u64() == parent2.next_u64());
}

TEST_CASE("uniform doubles live in [0,1) and are roughly uniform") {
  SplitMix64 rng(3);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.02);
}

TEST_CASE("normals have near-standard moments") {
  SplitMix64 rng(11);
  const int n = 50000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.next_normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("next_below is in range and shuffle is a permutation") {
  SplitMix64 rng(5);
  for (int i = 0; i < 1000; ++i) CHECK(rng.next_below(7) < 7);

  std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  shuffle(v, rng);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 10; ++i) CHECK(sorted[i] == i);
}
