#pragma once

// Dense row-major kernels behind the tensor ops.
//
// Every kernel has a serial reference and an OpenMP version. The parallel
// versions split work over output rows only, so each output element is
// reduced in the same order as the serial one and results are bitwise equal.

#include <cstddef>
#include <span>

namespace delib::kernels {

// Work (multiply-adds) below which the parallel kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
// da[m x k] += dc[m x n] * b[k x n]^T
void matmul_nt_acc(std::span<const double> dc, std::span<const double> b, std::span<double> da,
                   std::size_t m, std::size_t k, std::size_t n);
// db[k x n] += a[m x k]^T * dc[m x n]
void matmul_tn_acc(std::span<const double> a, std::span<const double> dc, std::span<double> db,
                   std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols);
// Writes normalized values (before gain/bias) and per-row inverse stddev.
void layer_norm_rows(std::span<const double> x, std::span<double> xhat, std::span<double> inv_std,
                     std::size_t rows, std::size_t cols, double eps);

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(std::span<const double> dc, std::span<const double> b, std::span<double> da,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(std::span<const double> a, std::span<const double> dc, std::span<double> db,
                   std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols);
void layer_norm_rows(std::span<const double> x, std::span<double> xhat, std::span<double> inv_std,
                     std::size_t rows, std::size_t cols, double eps);

}  // namespace parallel

}  // namespace delib::kernels
