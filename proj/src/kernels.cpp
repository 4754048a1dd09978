#include "delib/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace delib::kernels {

namespace {

// Row bodies shared by both variants so the arithmetic is identical.

inline void matmul_row(const double* a, const double* b, double* c, std::size_t k,
                       std::size_t n) {
  std::fill(c, c + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void matmul_nt_row(const double* dc, const double* b, double* da, std::size_t k,
                          std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += dc[j] * brow[j];
    da[p] += s;
  }
}

inline void matmul_tn_row(const double* a, const double* dc, double* db, std::size_t p,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double av = a[i * k + p];
    const double* dcrow = dc + i * n;
    for (std::size_t j = 0; j < n; ++j) db[j] += av * dcrow[j];
  }
}

inline void softmax_row(const double* x, double* y, std::size_t cols) {
  double mx = x[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void layer_norm_row(const double* x, double* xhat, double* inv_std, std::size_t cols,
                           double eps) {
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += x[j];
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const double is = 1.0 / std::sqrt(var + eps);
  *inv_std = is;
  for (std::size_t j = 0; j < cols; ++j) xhat[j] = (x[j] - mean) * is;
}

}  // namespace

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void matmul_nt_acc(std::span<const double> dc, std::span<const double> b, std::span<double> da,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    matmul_nt_row(dc.data() + i * n, b.data(), da.data() + i * k, k, n);
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> dc, std::span<double> db,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) matmul_tn_row(a.data(), dc.data(), db.data() + p * n, p, m, k, n);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x.data() + r * cols, y.data() + r * cols, cols);
}

void layer_norm_rows(std::span<const double> x, std::span<double> xhat, std::span<double> inv_std,
                     std::size_t rows, std::size_t cols, double eps) {
  for (std::size_t r = 0; r < rows; ++r)
    layer_norm_row(x.data() + r * cols, xhat.data() + r * cols, inv_std.data() + r, cols, eps);
}

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (std::int64_t i = 0; i < rows; ++i)
    matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void matmul_nt_acc(std::span<const double> dc, std::span<const double> b, std::span<double> da,
                   std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (std::int64_t i = 0; i < rows; ++i)
    matmul_nt_row(dc.data() + i * n, b.data(), da.data() + i * k, k, n);
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> dc, std::span<double> db,
                   std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (std::int64_t p = 0; p < rows; ++p)
    matmul_tn_row(a.data(), dc.data(), db.data() + p * n, static_cast<std::size_t>(p), m, k, n);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols) {
  const auto r_end = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols * 8 >= kParallelThreshold)
  for (std::int64_t r = 0; r < r_end; ++r)
    softmax_row(x.data() + r * cols, y.data() + r * cols, cols);
}

void layer_norm_rows(std::span<const double> x, std::span<double> xhat, std::span<double> inv_std,
                     std::size_t rows, std::size_t cols, double eps) {
  const auto r_end = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols * 8 >= kParallelThreshold)
  for (std::int64_t r = 0; r < r_end; ++r)
    layer_norm_row(x.data() + r * cols, xhat.data() + r * cols, inv_std.data() + r, cols, eps);
}

}  // namespace parallel

}  // namespace delib::kernels
