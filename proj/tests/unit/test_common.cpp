#include <doctest.h>

#include "helpers.hpp"

using namespace relcat;

TEST_CASE("fnv1a64 matches published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("rng is deterministic and below() stays in range") {
  Rng a(99), b(99), c(100);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next();
    CHECK(x == b.next());
    differs = differs || x != c.next();
  }
  CHECK(differs);
  Rng r(1);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = r.below(7);
    REQUIRE(v < 7);
    ++hist[v];
  }
  for (int h : hist) CHECK(std::abs(h - 10000) < 500);
}

TEST_CASE("normal() has roughly unit variance") {
  Rng r(3);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("derive_seed separates keys") {
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}

TEST_CASE("utf8 helpers count scalars") {
  const std::string s = "a\xc3\xa9\xe2\x80\x93\xf0\x9f\x98\x80z";  // a é – 😀 z
  CHECK(utf8::length(s) == 5);
  CHECK(utf8::encode(utf8::decode(s)) == s);
  const auto b = utf8::boundaries(s);
  REQUIRE(b.size() == 6);
  CHECK(b[0] == 0);
  CHECK(b[2] == 3);
  CHECK(b[3] == 6);
  CHECK(b[5] == s.size());
  CHECK_THROWS_AS(utf8::decode("\xff"), Error);
  CHECK_THROWS_AS(utf8::decode("\xc3"), Error);
}

TEST_CASE("write_file_atomic replaces content") {
  const auto dir = scratch_dir("atomic");
  const std::string p = (dir / "f.txt").string();
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  CHECK(read_file(p) == "two");
  CHECK_THROWS_AS(read_file((dir / "missing").string()), Error);
}
