#include "doctest.h"
#include "smamba/errors.hpp"
#include "smamba/random.hpp"
#include "smamba/tensor.hpp"

using namespace smamba;

TEST_CASE("tensor indexing is row-major") {
  Tensor t({2, 3, 4});
  t.at(1, 2, 3) = 7.0;
  CHECK(t[1 * 12 + 2 * 4 + 3] == 7.0);
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK_THROWS_AS(t.extent(3), ShapeError);
}

TEST_CASE("construction from data checks the element count") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  const Tensor t({2, 2}, {1, 2, 3, 4});
  CHECK(t.at(1, 0) == 3.0);
}

TEST_CASE("reshape keeps data and rejects size changes") {
  const Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  const Tensor r = t.reshaped({3, 2});
  CHECK(r.at(2, 1) == 5.0);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("elementwise ops require equal shapes") {
  const Tensor a({2}, {1, 2}), b({2}, {3, 5});
  CHECK(add(a, b) == Tensor({2}, {4, 7}));
  CHECK(sub(b, a) == Tensor({2}, {2, 3}));
  CHECK(mul(a, b) == Tensor({2}, {3, 10}));
  CHECK(scale(a, -2.0) == Tensor({2}, {-2, -4}));
  CHECK(max_abs_diff(a, b) == 3.0);
  CHECK_THROWS_AS(add(a, Tensor({3})), ShapeError);
}

TEST_CASE("scan order flattening is row-major over the grid") {
  Tensor g({2, 3, 1});
  for (std::size_t i = 0; i < 6; ++i) g[i] = static_cast<double>(i);
  const Tensor s = flatten_scan_order(g);
  CHECK(s.shape() == Shape{6, 1});
  CHECK(s.at(4, 0) == g.at(1, 1, 0));
  CHECK(unflatten_scan_order(s, 2, 3) == g);
  CHECK_THROWS_AS(unflatten_scan_order(s, 4, 2), ShapeError);
}

TEST_CASE("finite checks") {
  Tensor t({2});
  CHECK(all_finite(t));
  t[1] = std::nan("");
  CHECK_FALSE(all_finite(t));
}

TEST_CASE("rng is deterministic per seed") {
  Rng a(7), b(7);
  CHECK(a.uniform_tensor({5}) == b.uniform_tensor({5}));
  Rng c(1);
  for (int i = 0; i < 1000; ++i) CHECK(std::abs(c.truncated_normal(0.02)) <= 0.04);
}
