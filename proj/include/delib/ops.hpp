#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "delib/tensor.hpp"

namespace delib {

inline constexpr double kLayerNormEps = 1e-5;

// 2-D matrix product, [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose.
Tensor transpose(const Tensor& a);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x + bias broadcast over the last axis; bias has shape [last extent].
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);

// Max-shifted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
// log(softmax(x)) along the last axis, computed without forming softmax.
Tensor log_softmax(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

// Rows of a [V x d] table; backward scatter-adds into the table.
Tensor embedding_gather(const Tensor& table, std::span<const int> ids);

// Sum of all elements, shape [1].
Tensor reduce_sum(const Tensor& x);

// Normalizes over the last axis: gain * (x - mean) / sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

// out[i] = x[i, index[i]] for a 2-D x; negative indices yield 0 and no gradient.
Tensor pick(const Tensor& x, std::span<const int> index);

}  // namespace delib
