#include <doctest.h>

#include "milreg/common.hpp"

using namespace milreg;

TEST_SUITE("common") {

TEST_CASE("rng is deterministic per seed") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform(), y = b.uniform(), z = c.uniform();
    all_equal = all_equal && x == y;
    any_diff = any_diff || x != z;
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("rng bounded draws stay in range") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    CHECK(rng.below(13) < 13);
    const auto v = rng.range(-3, 3);
    CHECK(v >= -3);
    CHECK(v <= 3);
  }
}

TEST_CASE("normal draws have roughly unit moments") {
  Rng rng(11);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("percentile matches linear interpolation") {
  std::vector<double> xs = {1, 2, 3, 4, 5};
  CHECK(percentile(xs, 50.0) == 3.0);
  CHECK(percentile(xs, 0.0) == 1.0);
  CHECK(percentile(xs, 100.0) == 5.0);
  CHECK(percentile(xs, 25.0) == 2.0);
  CHECK(percentile({0.0, 10.0}, 90.0) == doctest::Approx(9.0));
}

TEST_CASE("lower median picks the lower middle element") {
  CHECK(lower_median({1, 2, 3, 4, 5}) == 3.0);
  CHECK(lower_median({0, 10}) == 0.0);
  CHECK(lower_median({4, 1, 3, 2}) == 2.0);
}

TEST_CASE("fnv1a64 matches known vectors") {
  CHECK(fnv1a64(nullptr, 0) == 0xcbf29ce484222325ULL);
  const char a = 'a';
  CHECK(fnv1a64(&a, 1) == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("fmt_double round-trips") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double v = (rng.uniform() - 0.5) * std::pow(10.0, rng.range(-8, 8));
    double back = 0.0;
    std::sscanf(fmt_double(v).c_str(), "%lf", &back);
    CHECK(back == v);
  }
}

TEST_CASE("csv line splitting handles quotes") {
  const auto f = split_csv_line("a,\"b,c\",d");
  REQUIRE(f.size() == 3);
  CHECK(f[1] == "b,c");
  const auto g = split_csv_line("x,,z\r");
  REQUIRE(g.size() == 3);
  CHECK(g[1].empty());
  CHECK(g[2] == "z");
}

}  // TEST_SUITE
