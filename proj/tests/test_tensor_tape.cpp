#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "nao/rng.hpp"
#include "nao/tape.hpp"
#include "nao/tensor.hpp"

using nao::Rng;
using nao::Tape;
using nao::ValueGrid;

TEST_CASE("value grid shape bookkeeping") {
  ValueGrid g({2, 3});
  REQUIRE(g.size() == 6);
  REQUIRE_THROWS_AS(ValueGrid({2, 2}, {1.0, 2.0, 3.0}), nao::ShapeError);
  REQUIRE(nao::shape_str({4, 5}) == "(4x5)");
}

TEST_CASE("matmul identity is exact") {
  Rng rng(1);
  ValueGrid A = rng.uniform_matrix(3, 5, -1.0, 1.0);
  ValueGrid I3 = ValueGrid::matrix(3, 3);
  for (int i = 0; i < 3; ++i) I3.at(std::size_t(i), std::size_t(i)) = 1.0;
  Tape t;
  const int out = t.matmul(t.constant(I3), t.constant(A));
  for (std::size_t i = 0; i < A.size(); ++i) REQUIRE(t.value(out)[i] == A[i]);

  ValueGrid I5 = ValueGrid::matrix(5, 5);
  for (int i = 0; i < 5; ++i) I5.at(std::size_t(i), std::size_t(i)) = 1.0;
  Tape t2;
  const int out2 = t2.matmul(t2.constant(A), t2.constant(I5));
  for (std::size_t i = 0; i < A.size(); ++i) REQUIRE(t2.value(out2)[i] == A[i]);
}

TEST_CASE("matmul hand value") {
  Tape t;
  const int a = t.constant(ValueGrid::from_rows({{1, 2}, {3, 4}}));
  const int b = t.constant(ValueGrid::from_rows({{1}, {1}}));
  const ValueGrid& c = t.value(t.matmul(a, b));
  REQUIRE(c.at(0, 0) == 3.0);
  REQUIRE(c.at(1, 0) == 7.0);
}

TEST_CASE("shape mismatch names both shapes") {
  Tape t;
  const int a = t.constant(ValueGrid::matrix(2, 3));
  const int b = t.constant(ValueGrid::matrix(4, 2));
  try {
    t.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const nao::ShapeError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("(2x3)") != std::string::npos);
    REQUIRE(msg.find("(4x2)") != std::string::npos);
  }
}

TEST_CASE("non-finite results raise numeric errors") {
  Tape t;
  const int big = t.constant(ValueGrid::matrix(1, 1, 1e308));
  REQUIRE_THROWS_AS(t.mul(big, big), nao::NumericError);
}

TEST_CASE("row softmax: zero row is uniform, rows sum to one") {
  Tape t;
  const int z = t.row_softmax(t.constant(ValueGrid::matrix(1, 7)));
  for (std::size_t j = 0; j < 7; ++j)
    REQUIRE(t.value(z).at(0, j) == Catch::Approx(1.0 / 7.0).epsilon(1e-14));

  Rng rng(3);
  Tape t2;
  const int s = t2.row_softmax(t2.constant(rng.uniform_matrix(9, 11, -30.0, 30.0)));
  const ValueGrid& y = t2.value(s);
  for (std::size_t i = 0; i < 9; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 11; ++j) {
      REQUIRE(y.at(i, j) >= 0.0);
      sum += y.at(i, j);
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("repeated forward_eval is pure") {
  Rng rng(5);
  Tape t;
  const int x = t.leaf(rng.uniform_matrix(4, 4, -1.0, 1.0), true);
  const int y = t.row_softmax(t.matmul(x, t.transpose(x)));
  const ValueGrid first = t.forward_eval(y);
  const ValueGrid second = t.forward_eval(y);
  REQUIRE(first.values == second.values);
}

TEST_CASE("backward before forward is a state error") {
  Tape t;
  const int x = t.leaf(ValueGrid::matrix(2, 2, 1.0), true);
  const int y = t.full_sum(x);
  t.set_leaf(x, ValueGrid::matrix(2, 2, 2.0));
  REQUIRE_THROWS_AS(t.backward_scalar(y), nao::StateError);
  t.forward_eval(y);
  REQUIRE_NOTHROW(t.backward_scalar(y));
}

TEST_CASE("backward seed shape must match root") {
  Tape t;
  const int x = t.leaf(ValueGrid::matrix(2, 2, 1.0), true);
  const int y = t.row_sum(x);
  REQUIRE_THROWS_AS(t.backward(y, ValueGrid::matrix(3, 1)), nao::ShapeError);
}

TEST_CASE("sum gradients are ones; x*x gradient is 2x") {
  Tape t;
  const int x = t.leaf(ValueGrid({1, 3}, {1.0, 2.0, 3.0}), true);
  const int s = t.full_sum(x);
  t.backward_scalar(s);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(t.grad(x)[i] == 1.0);

  Tape t2;
  const int x2 = t2.leaf(ValueGrid({1, 3}, {1.0, 2.0, 3.0}), true);
  const int s2 = t2.full_sum(t2.mul(x2, x2));
  t2.backward_scalar(s2);
  REQUIRE(t2.grad(x2)[0] == Catch::Approx(2.0));
  REQUIRE(t2.grad(x2)[1] == Catch::Approx(4.0));
  REQUIRE(t2.grad(x2)[2] == Catch::Approx(6.0));
}

TEST_CASE("fan-out accumulation is deterministic") {
  auto run = [] {
    Tape t;
    const int x = t.leaf(ValueGrid({2, 2}, {0.3, -0.7, 1.1, 0.2}), true);
    const int y = t.add(t.mul(x, x), t.scale(x, 0.5));
    const int z = t.full_sum(t.add(y, t.transpose(x)));
    t.backward_scalar(z);
    return t.grad(x).values;
  };
  REQUIRE(run() == run());
}

namespace {

// Central finite differences on an arbitrary scalar-rooted graph builder.
template <typename Builder>
void check_gradient(Builder&& build, std::vector<ValueGrid> leaves, double tol = 1e-5) {
  Tape t;
  std::vector<int> ids;
  for (const ValueGrid& v : leaves) ids.push_back(t.leaf(v, true));
  const int root = build(t, ids);
  REQUIRE(t.value(root).size() == 1);
  t.backward_scalar(root);
  std::vector<ValueGrid> grads;
  for (int id : ids) grads.push_back(t.grad(id));

  const double h = 1e-6;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (std::size_t k = 0; k < leaves[li].size(); ++k) {
      auto eval_at = [&](double delta) {
        Tape t2;
        std::vector<int> ids2;
        for (std::size_t m = 0; m < leaves.size(); ++m) {
          ValueGrid v = leaves[m];
          if (m == li) v[k] += delta;
          ids2.push_back(t2.leaf(v, true));
        }
        return t2.value(build(t2, ids2))[0];
      };
      const double fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
      const double ad = grads[li][k];
      const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-7});
      INFO("leaf " << li << " entry " << k << ": ad=" << ad << " fd=" << fd);
      REQUIRE(rel < tol);
    }
  }
}

}  // namespace

TEST_CASE("every primitive matches finite differences") {
  Rng rng(11);
  const ValueGrid A = rng.uniform_matrix(3, 4, -1.0, 1.0);
  const ValueGrid B = rng.uniform_matrix(4, 2, -1.0, 1.0);
  const ValueGrid C = rng.uniform_matrix(3, 4, -1.0, 1.0);
  const ValueGrid R = rng.uniform_matrix(1, 4, -1.0, 1.0);

  SECTION("matmul + transpose") {
    check_gradient(
        [](Tape& t, const std::vector<int>& ids) {
          return t.full_sum(t.matmul(ids[0], ids[1]));
        },
        {A, B});
    check_gradient(
        [](Tape& t, const std::vector<int>& ids) {
          return t.full_sum(t.matmul(t.transpose(ids[0]), ids[1]));
        },
        {A, C});
  }
  SECTION("add/sub/mul/scale") {
    check_gradient(
        [](Tape& t, const std::vector<int>& ids) {
          return t.full_sum(t.mul(t.sub(t.add(ids[0], ids[1]), t.scale(ids[0], 0.3)), ids[1]));
        },
        {A, C});
  }
  SECTION("row and full sums") {
    check_gradient(
        [](Tape& t, const std::vector<int>& ids) {
          return t.full_sum(t.mul(t.row_sum(ids[0]), t.row_sum(ids[0])));
        },
        {A});
  }
  SECTION("leaky relu") {
    check_gradient(
        [](Tape& t, const std::vector<int>& ids) {
          return t.full_sum(t.leaky_relu(ids[0], 0.01));
        },
        {A});
  }
  SECTION("row softmax") {
    check_gradient(
        [](Tape& t, const std::vector<int>& ids) {
          return t.full_sum(t.mul(t.row_softmax(ids[0]), ids[1]));
        },
        {A, C});
  }
  SECTION("reshape, concat, slice, broadcast") {
    check_gradient(
        [](Tape& t, const std::vector<int>& ids) {
          const int cat = t.concat(ids[0], ids[1], 0);            // 6 x 4
          const int cut = t.slice_rows(cat, 1, 5);                // 4 x 4
          const int wide = t.concat(cut, cut, 1);                 // 4 x 8
          const int flat = t.reshape(wide, {8, 4});
          const int bro = t.broadcast_rows(ids[2], 8);            // 8 x 4
          return t.full_sum(t.mul(flat, bro));
        },
        {A, C, R});
  }
}

TEST_CASE("gradient property on random compositions") {
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const ValueGrid X = rng.uniform_matrix(3, 3, -1.0, 1.0);
    const ValueGrid W = rng.uniform_matrix(3, 3, -1.0, 1.0);
    check_gradient(
        [](Tape& t, const std::vector<int>& ids) {
          const int scores = t.row_softmax(t.matmul(ids[0], t.transpose(ids[1])));
          const int mixed = t.add(t.matmul(scores, ids[0]), ids[0]);
          return t.full_sum(t.mul(mixed, mixed));
        },
        {X, W});
  }
}
