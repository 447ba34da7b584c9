#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "tpl/rng.hpp"

using namespace tpl;

TEST_CASE("root stream is the reference SplitMix64 sequence") {
  // Reference outputs for seed 1234567.
  Rng rng(1234567);
  const std::uint64_t golden[] = {6457827717110365317ULL, 3203168211198807973ULL,
                                  9817491932198370423ULL, 4593380528125082431ULL,
                                  16408922859458223821ULL};
  for (std::uint64_t g : golden) CHECK(rng.next_u64() == g);
  Rng zero(0);
  CHECK(zero.next_u64() == 16294208416658607535ULL);
  CHECK(zero.next_u64() == 7960286522194355700ULL);
  CHECK(zero.position() == 2);
}

TEST_CASE("same seed and call sequence reproduce the stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
    CHECK(a.below(17) == b.below(17));
  }
}

TEST_CASE("named splits are independent of the parent position") {
  Rng a(9);
  const Rng before = a.split("data");
  for (int i = 0; i < 10; ++i) (void)a.next_u64();
  Rng after = a.split("data");
  Rng copy = before;
  for (int i = 0; i < 10; ++i) CHECK(copy.next_u64() == after.next_u64());
  Rng x = Rng(9).split("data"), y = Rng(9).split("init");
  CHECK(x.next_u64() != y.next_u64());
  Rng i0 = Rng(9).split(std::uint64_t{0}), i1 = Rng(9).split(std::uint64_t{1});
  CHECK(i0.next_u64() != i1.next_u64());
}

TEST_CASE("uniform, below and normal have the right ranges and moments") {
  Rng rng(7);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, u = 0.0;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
    const double v = rng.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    u += v;
    ++counts[rng.below(5)];
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  CHECK(std::abs(u / n - 0.5) < 0.005);
  for (int c : counts) CHECK(std::abs(c - n / 5) < 1500);
}

TEST_CASE("shuffle is a deterministic permutation") {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  b = a;
  Rng r1(3), r2(3);
  shuffle(std::span<int>(a), r1);
  shuffle(std::span<int>(b), r2);
  CHECK(a == b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}
