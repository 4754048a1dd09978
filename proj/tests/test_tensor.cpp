#include <doctest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "delib/gradcheck.hpp"
#include "delib/ops.hpp"
#include "delib/suites.hpp"
#include "delib/tensor.hpp"

using namespace delib;
using Big = boost::multiprecision::cpp_dec_float_50;

namespace {

Tensor leaf(Shape s, std::vector<double> v) { return Tensor(std::move(s), std::move(v), true); }

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_leaf(std::mt19937_64& rng, Shape s, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = d(rng);
  return leaf(std::move(s), std::move(v));
}

}  // namespace

TEST_CASE("tensor storage invariants") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  CHECK(Tensor::scalar(2.5).item() == 2.5);

  // Zero extents describe empty sequences.
  Tensor empty(Shape{0, 4});
  CHECK(empty.numel() == 0);
}

TEST_CASE("gradients mirror value shapes and results are immutable") {
  Tensor a = leaf({2, 2}, {1, 2, 3, 4});
  Tensor y = reduce_sum(mul(a, a));
  y.backward();
  REQUIRE(a.has_grad());
  CHECK(a.grad().size() == a.numel());
  Tensor prod = mul(a, a);
  CHECK_THROWS(prod.mutable_data());
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    Tensor i2({2, 2}, {1, 0, 0, 1});
    CHECK(values(matmul(i2, i2)) == std::vector<double>{1, 0, 0, 1});
  }
  SUBCASE("hand computation") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {1, 1});
    const Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(values(c) == std::vector<double>{3, 7});
  }
  SUBCASE("dimension error names both shapes") {
    Tensor a({2, 3}), b({2, 3});
    try {
      matmul(a, b);
      FAIL("expected a dimension error");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("x [2x3]") != std::string::npos);
    }
  }
  SUBCASE("d sum(AB) / dA = ones * B^T against finite differences") {
    std::mt19937_64 rng(3);
    Tensor a = random_leaf(rng, {3, 4}), b = random_leaf(rng, {4, 2});
    reduce_sum(matmul(a, b)).backward();
    const double h = 1e-6;
    auto f = [&] {
      NoGradGuard g;
      return reduce_sum(matmul(a, b)).item();
    };
    for (std::size_t i = 0; i < a.numel(); ++i) {
      auto d = a.mutable_data();
      const double x0 = d[i];
      d[i] = x0 + h;
      const double up = f();
      d[i] = x0 - h;
      const double down = f();
      d[i] = x0;
      const double closed = b.at(i % 4, 0) + b.at(i % 4, 1);  // (ones * B^T)[r, c] = sum_j B[c, j]
      CHECK(a.grad()[i] == doctest::Approx(closed).epsilon(1e-12));
      CHECK(std::abs((up - down) / (2 * h) - closed) < 1e-8);
    }
  }
}

TEST_CASE("softmax") {
  SUBCASE("symmetry") {
    const auto y = values(softmax(Tensor({3}, {0, 0, 0}), 0));
    for (double v : y) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }
  SUBCASE("large magnitudes do not overflow") {
    const auto y = values(softmax(Tensor({2}, {1000, 1000}), 0));
    CHECK(y[0] == 0.5);
    CHECK(y[1] == 0.5);
  }
  SUBCASE("[1,2,3] against a 50-digit oracle") {
    Big e[3] = {boost::multiprecision::exp(Big(1)), boost::multiprecision::exp(Big(2)),
                boost::multiprecision::exp(Big(3))};
    const Big s = e[0] + e[1] + e[2];
    // Frozen from the oracle above.
    const double frozen[3] = {0.090030573170380457998, 0.24472847105479765247, 0.66524095577482188953};
    const auto y = values(softmax(Tensor({3}, {1, 2, 3}), 0));
    for (int i = 0; i < 3; ++i) {
      const double oracle = static_cast<double>(e[i] / s);
      CHECK(std::abs(oracle - frozen[i]) < 1e-15);
      CHECK(std::abs(y[i] - oracle) < 1e-12);
    }
  }
  SUBCASE("property: rows sum to one and constant shifts change nothing") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t r = 1 + rng() % 4, c = 1 + rng() % 6;
      Tensor x = random_leaf(rng, {r, c}, -20, 20);
      const double shift = std::uniform_real_distribution<double>(-50, 50)(rng);
      std::vector<double> shifted = values(x);
      for (auto& v : shifted) v += shift;
      const auto y = values(softmax(x, 1));
      const auto ys = values(softmax(Tensor({r, c}, shifted), 1));
      for (std::size_t i = 0; i < r; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          sum += y[i * c + j];
          CHECK(y[i * c + j] >= 0.0);
          CHECK(std::abs(y[i * c + j] - ys[i * c + j]) < 1e-12);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
      }
    }
  }
  SUBCASE("axis 0 of a matrix normalizes columns") {
    const auto y = values(softmax(Tensor({2, 2}, {0, 1, 0, 1}), 0));
    CHECK(y == std::vector<double>{0.5, 0.5, 0.5, 0.5});
  }
}

TEST_CASE("elementwise and shape ops") {
  CHECK(values(relu(Tensor({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});

  SUBCASE("repeated gather indices accumulate") {
    Tensor table = leaf({3, 2}, {1, 2, 3, 4, 5, 6});
    const std::vector<int> ids{0, 0};
    reduce_sum(embedding_gather(table, ids)).backward();
    CHECK(values(Tensor({3, 2}, {table.grad().begin(), table.grad().end()})) ==
          std::vector<double>{2, 2, 0, 0, 0, 0});
  }
  SUBCASE("gather rejects bad ids naming them") {
    Tensor table({3, 2});
    const std::vector<int> ids{1, 7};
    try {
      embedding_gather(table, ids);
      FAIL("expected an index error");
    } catch (const IndexError& e) {
      CHECK(std::string(e.what()).find('7') != std::string::npos);
    }
  }
  SUBCASE("concat checks trailing extents") {
    const Tensor parts[] = {Tensor({2, 3}), Tensor({2, 4})};
    CHECK_THROWS_AS(concat(parts, 0), ShapeError);
    CHECK(concat(parts, 1).shape() == Shape{2, 7});
  }
  SUBCASE("slice and log") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(values(slice(x, 1, 1, 3)) == std::vector<double>{2, 3, 5, 6});
    CHECK(log(Tensor(Shape{1}, std::vector<double>{1.0})).item() == 0.0);
  }
}

TEST_CASE("layer_norm") {
  Tensor ones({3}, {1, 1, 1}), zeros({3});
  SUBCASE("constant vector maps to zeros") {
    for (double v : values(layer_norm(Tensor({3}, {4, 4, 4}), ones, zeros))) CHECK(v == 0.0);
  }
  SUBCASE("[1,3] is (x - mean) / std") {
    const auto y = values(layer_norm(Tensor({2}, {1, 3}), Tensor({2}, {1, 1}), Tensor({2})));
    CHECK(std::abs(y[0] + 1.0) < 1e-3);
    CHECK(std::abs(y[1] - 1.0) < 1e-3);
    // With eps inside the root: 1 / sqrt(1 + 1e-5).
    CHECK(y[1] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-14));
  }
  SUBCASE("gradient matches finite differences") {
    std::mt19937_64 rng(5);
    Tensor x = random_leaf(rng, {3, 5}), g = random_leaf(rng, {5}), b = random_leaf(rng, {5});
    Tensor w = random_leaf(rng, {3, 5}).detach();
    const auto r = grad_check([&] { return reduce_sum(mul(layer_norm(x, g, b), w)); }, {x, g, b});
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check") {
  SUBCASE("sum(x^2) at [1,2]") {
    Tensor x = leaf({2}, {1, 2});
    const auto r = grad_check([](const Tensor& v) { return reduce_sum(mul(v, v)); }, x);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-6);
    x.zero_grad();  // grad_check leaves its analytic gradient behind
    reduce_sum(mul(x, x)).backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
  }
  SUBCASE("sum(softmax(x)) has zero gradient") {
    Tensor x = leaf({4}, {0.3, -1.2, 2.0, 0.7});
    reduce_sum(softmax(x, 0)).backward();
    for (double g : x.grad()) CHECK(std::abs(g) < 1e-12);
    CHECK(grad_check([](const Tensor& v) { return reduce_sum(softmax(v, 0)); }, x).passed);
  }
  SUBCASE("non-finite values give a diagnostic failure") {
    Tensor x = leaf({2}, {-1.0, 1.0});
    const auto r = grad_check([](const Tensor& v) { return reduce_sum(log(v)); }, x);
    CHECK_FALSE(r.passed);
    CHECK_FALSE(r.diagnostic.empty());
  }
  SUBCASE("a wrong backward is caught") {
    Tensor x = leaf({3}, {0.5, 1.0, 1.5});
    // The detached factor hides part of the dependence from autodiff
    // (analytic 3x, true 4x).
    auto f = [&] { return reduce_sum(add(mul(x, x), mul(x, x.detach()))); };
    CHECK_FALSE(grad_check(f, {x}).passed);
  }
}

TEST_CASE("property: every op passes finite differences on random shapes") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& r : suites::op_gradcheck_suite(seed, 4)) {
      INFO(r.name, " seed ", seed, " ", r.report.diagnostic);
      CHECK(r.report.passed);
      CHECK(r.report.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("backward visits shared nodes once and leaf grads accumulate") {
  Tensor x = leaf({1}, {3.0});
  Tensor y = mul(x, x);
  Tensor z = reduce_sum(add(y, y));  // 2 x^2
  z.backward();
  CHECK(x.grad()[0] == 12.0);
  z.backward();
  CHECK(x.grad()[0] == 24.0);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("no-grad guard records no graph") {
  Tensor x = leaf({2}, {1, 2});
  {
    NoGradGuard g;
    CHECK_FALSE(grad_enabled());
    Tensor y = mul(x, x);
    CHECK(y.is_leaf());
  }
  CHECK(grad_enabled());
}

TEST_CASE("determinism: identical forwards are bitwise equal") {
  std::mt19937_64 rng(9);
  Tensor a = random_leaf(rng, {4, 5}), b = random_leaf(rng, {5, 6});
  auto run = [&] { return values(log_softmax(matmul(a, b))); };
  CHECK(run() == run());
}
