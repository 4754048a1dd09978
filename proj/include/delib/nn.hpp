#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "delib/tensor.hpp"

namespace delib::nn {

inline constexpr double kMaskBias = -1e9;
inline constexpr double kInitRange = 0.08;

struct DegenerateMaskError : ShapeError {
  using ShapeError::ShapeError;
};

/// Named learnable tensors, iterated in path order.
class ParamStore {
 public:
  const Tensor& add(const std::string& path, Tensor t);
  const Tensor& get(const std::string& path) const;
  bool contains(const std::string& path) const { return params_.count(path) != 0; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all() { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::map<std::string, Tensor> params_;
};

/// uniform(-0.08, 0.08) matrices, zero biases, unit layer-norm gains.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor matrix(std::size_t rows, std::size_t cols);
  static Tensor zeros(std::size_t n) { return Tensor({n}, true); }
  static Tensor ones(std::size_t n) { return Tensor({n}, std::vector<double>(n, 1.0), true); }

 private:
  std::mt19937_64 rng_;
};

/// Boolean [rows x cols] table; true where the query row may see the key.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<char> allowed;

  bool at(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
  // Keys equal to `pad_id` hidden from every query.
  static AttentionMask key_padding(std::size_t rows, std::span<const int> key_tokens, int pad_id);
  // Key j visible to query i iff j <= i, combined with key padding.
  static AttentionMask causal(std::span<const int> tokens, int pad_id);
  // Additive bias: 0 where allowed, kMaskBias elsewhere. Throws
  // DegenerateMaskError when a row permits no key.
  Tensor bias() const;
};

/// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(...).
Tensor positional_encoding(std::size_t length, std::size_t d_model);

/// Precomputed positional table shared read-only by all forward passes.
class PositionTable {
 public:
  PositionTable(std::size_t max_length, std::size_t d_model);
  // Rows [0, length); computed on demand past max_length.
  Tensor rows(std::size_t length) const;
  std::size_t d_model() const { return d_model_; }

 private:
  std::size_t max_length_;
  std::size_t d_model_;
  std::vector<double> table_;
};

/// Embedding rows plus positional encoding, positions counted from 0.
Tensor embed_sequence(std::span<const int> ids, const Tensor& table, const PositionTable& pe);

struct MultiHeadAttention {
  std::size_t heads = 1;
  Tensor w_q, w_k, w_v, w_o;

  static MultiHeadAttention create(ParamStore& store, const std::string& prefix,
                                   std::size_t d_model, std::size_t heads, Initializer& init);
  std::size_t d_model() const { return w_q.shape()[0]; }
  std::size_t d_k() const { return d_model() / heads; }

  /// query [q x d], key/value [m x d] -> [q x d]. When `weights` is given it
  /// receives one [q x m] attention matrix per head.
  Tensor forward(const Tensor& query, const Tensor& key, const Tensor& value,
                 const AttentionMask* mask = nullptr, std::vector<Tensor>* weights = nullptr) const;
};

struct FeedForward {
  Tensor w1, b1, w2, b2;

  static FeedForward create(ParamStore& store, const std::string& prefix, std::size_t d_model,
                            std::size_t d_ff, Initializer& init);
  // max(0, x W1 + b1) W2 + b2
  Tensor forward(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain, bias;

  static LayerNorm create(ParamStore& store, const std::string& prefix, std::size_t d_model);
  Tensor forward(const Tensor& x) const;
};

/// Inverted dropout; identity when p == 0 or rng is null.
Tensor dropout(const Tensor& x, double p, std::mt19937_64* rng);

/// Post-norm residual wrapper: LayerNorm(x + f(x)).
Tensor sublayer(const Tensor& x, const std::function<Tensor(const Tensor&)>& f,
                const LayerNorm& norm, double dropout_p = 0.0, std::mt19937_64* rng = nullptr);

}  // namespace delib::nn
