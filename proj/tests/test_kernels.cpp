#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <random>
#include <vector>

#include "delib/kernels.hpp"

namespace k = delib::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

// Sizes straddle the parallel threshold so both code paths run.
TEST_CASE("parallel kernels are bitwise equal to the serial reference") {
  omp_set_num_threads(4);
  std::mt19937_64 rng(42);
  const std::size_t dims[][3] = {{3, 5, 7}, {64, 64, 64}, {97, 31, 53}, {128, 256, 33}, {1, 512, 512}};
  for (const auto& d : dims) {
    const std::size_t m = d[0], kk = d[1], n = d[2];
    CAPTURE(m);
    CAPTURE(kk);
    CAPTURE(n);
    const auto a = random_values(m * kk, rng), b = random_values(kk * n, rng), dc = random_values(m * n, rng);

    std::vector<double> c1(m * n), c2(m * n);
    k::serial::matmul(a, b, c1, m, kk, n);
    k::parallel::matmul(a, b, c2, m, kk, n);
    CHECK(c1 == c2);

    std::vector<double> da1 = random_values(m * kk, rng), da2 = da1;
    k::serial::matmul_nt_acc(dc, b, da1, m, kk, n);
    k::parallel::matmul_nt_acc(dc, b, da2, m, kk, n);
    CHECK(da1 == da2);

    std::vector<double> db1 = random_values(kk * n, rng), db2 = db1;
    k::serial::matmul_tn_acc(a, dc, db1, m, kk, n);
    k::parallel::matmul_tn_acc(a, dc, db2, m, kk, n);
    CHECK(db1 == db2);

    std::vector<double> y1(m * n), y2(m * n);
    k::serial::softmax_rows(c1, y1, m, n);
    k::parallel::softmax_rows(c1, y2, m, n);
    CHECK(y1 == y2);

    std::vector<double> h1(m * n), h2(m * n), s1(m), s2(m);
    k::serial::layer_norm_rows(c1, h1, s1, m, n, 1e-5);
    k::parallel::layer_norm_rows(c1, h2, s2, m, n, 1e-5);
    CHECK(h1 == h2);
    CHECK(s1 == s2);
  }
}

TEST_CASE("serial matmul matches a naive triple loop") {
  std::mt19937_64 rng(7);
  const std::size_t m = 4, kk = 3, n = 5;
  const auto a = random_values(m * kk, rng), b = random_values(kk * n, rng);
  std::vector<double> c(m * n);
  k::serial::matmul(a, b, c, m, kk, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < kk; ++p) s += a[i * kk + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("NaN propagates through the gradient kernels") {
  const std::vector<double> a{0.0, 1.0}, dc{std::nan(""), 1.0};
  std::vector<double> db(1, 0.0);
  k::serial::matmul_tn_acc(a, dc, db, 2, 1, 1);  // db = 0 * NaN + 1 * 1
  CHECK(std::isnan(db[0]));
}
