#include "delib/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "delib/ops.hpp"

namespace delib::nn {

const Tensor& ParamStore::add(const std::string& path, Tensor t) {
  auto [it, inserted] = params_.emplace(path, std::move(t));
  if (!inserted) throw ConfigError("duplicate parameter path: " + path);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw ConfigError("unknown parameter path: " + path);
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

Tensor Initializer::matrix(std::size_t rows, std::size_t cols) {
  std::uniform_real_distribution<double> dist(-kInitRange, kInitRange);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng_);
  return Tensor({rows, cols}, std::move(v), true);
}

AttentionMask AttentionMask::key_padding(std::size_t rows, std::span<const int> key_tokens,
                                         int pad_id) {
  AttentionMask m{rows, key_tokens.size(), std::vector<char>(rows * key_tokens.size())};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < key_tokens.size(); ++c)
      m.allowed[r * m.cols + c] = key_tokens[c] != pad_id;
  return m;
}

AttentionMask AttentionMask::causal(std::span<const int> tokens, int pad_id) {
  const std::size_t n = tokens.size();
  AttentionMask m{n, n, std::vector<char>(n * n)};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c <= r; ++c) m.allowed[r * n + c] = tokens[c] != pad_id;
  return m;
}

Tensor AttentionMask::bias() const {
  std::vector<double> b(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (at(r, c)) {
        any = true;
      } else {
        b[r * cols + c] = kMaskBias;
      }
    }
    if (!any) throw DegenerateMaskError("attention mask row " + std::to_string(r) + " permits no key");
  }
  return Tensor({rows, cols}, std::move(b));
}

Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  if (d_model % 2 != 0) throw ConfigError("positional encoding needs an even d_model, got " +
                                          std::to_string(d_model));
  std::vector<double> v(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) / rate;
      v[pos * d_model + 2 * i] = std::sin(angle);
      v[pos * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({length, d_model}, std::move(v));
}

PositionTable::PositionTable(std::size_t max_length, std::size_t d_model)
    : max_length_(max_length), d_model_(d_model) {
  auto pe = positional_encoding(max_length, d_model);
  table_.assign(pe.data().begin(), pe.data().end());
}

Tensor PositionTable::rows(std::size_t length) const {
  if (length > max_length_) return positional_encoding(length, d_model_);
  return Tensor({length, d_model_},
                std::vector<double>(table_.begin(), table_.begin() + static_cast<std::ptrdiff_t>(length * d_model_)));
}

Tensor embed_sequence(std::span<const int> ids, const Tensor& table, const PositionTable& pe) {
  if (table.rank() != 2 || table.shape()[1] != pe.d_model()) {
    throw ShapeError("embed_sequence: table " + shape_str(table.shape()) +
                     " does not match positional width " + std::to_string(pe.d_model()));
  }
  return add(embedding_gather(table, ids), pe.rows(ids.size()));
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& store, const std::string& prefix,
                                              std::size_t d_model, std::size_t heads,
                                              Initializer& init) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by heads " +
                      std::to_string(heads));
  }
  MultiHeadAttention m;
  m.heads = heads;
  m.w_q = store.add(prefix + ".w_q", init.matrix(d_model, d_model));
  m.w_k = store.add(prefix + ".w_k", init.matrix(d_model, d_model));
  m.w_v = store.add(prefix + ".w_v", init.matrix(d_model, d_model));
  m.w_o = store.add(prefix + ".w_o", init.matrix(d_model, d_model));
  return m;
}

Tensor MultiHeadAttention::forward(const Tensor& query, const Tensor& key, const Tensor& value,
                                   const AttentionMask* mask, std::vector<Tensor>* weights) const {
  const std::size_t d = d_model();
  if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2 || query.shape()[1] != d ||
      key.shape()[1] != d || value.shape()[1] != d) {
    throw ShapeError("attention: query " + shape_str(query.shape()) + ", key " +
                     shape_str(key.shape()) + ", value " + shape_str(value.shape()) +
                     " incompatible with d_model " + std::to_string(d));
  }
  if (key.shape()[0] != value.shape()[0]) {
    throw ShapeError("attention: key and value lengths differ: " + shape_str(key.shape()) + " vs " +
                     shape_str(value.shape()));
  }
  const std::size_t q_len = query.shape()[0], m_len = key.shape()[0];
  if (m_len == 0 && q_len > 0) throw DegenerateMaskError("attention over an empty key set");
  Tensor bias;
  if (mask) {
    if (mask->rows != q_len || mask->cols != m_len) {
      throw ShapeError("attention: mask " + std::to_string(mask->rows) + "x" +
                       std::to_string(mask->cols) + " does not match scores " +
                       std::to_string(q_len) + "x" + std::to_string(m_len));
    }
    bias = mask->bias();
  }

  const std::size_t dk = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor q = matmul(query, w_q);
  Tensor k = matmul(key, w_k);
  Tensor v = matmul(value, w_v);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice(q, 1, h * dk, (h + 1) * dk);
    Tensor kh = heads == 1 ? k : slice(k, 1, h * dk, (h + 1) * dk);
    Tensor vh = heads == 1 ? v : slice(v, 1, h * dk, (h + 1) * dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (bias.defined()) scores = add(scores, bias);
    Tensor p = softmax(scores, 1);
    if (weights) weights->push_back(p);
    outs.push_back(matmul(p, vh));
  }
  Tensor joined = heads == 1 ? outs[0] : concat(outs, 1);
  return matmul(joined, w_o);
}

FeedForward FeedForward::create(ParamStore& store, const std::string& prefix, std::size_t d_model,
                                std::size_t d_ff, Initializer& init) {
  FeedForward f;
  f.w1 = store.add(prefix + ".w1", init.matrix(d_model, d_ff));
  f.b1 = store.add(prefix + ".b1", Initializer::zeros(d_ff));
  f.w2 = store.add(prefix + ".w2", init.matrix(d_ff, d_model));
  f.b2 = store.add(prefix + ".b2", Initializer::zeros(d_model));
  return f;
}

Tensor FeedForward::forward(const Tensor& x) const {
  return add_bias(matmul(relu(add_bias(matmul(x, w1), b1)), w2), b2);
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& prefix, std::size_t d_model) {
  LayerNorm n;
  n.gain = store.add(prefix + ".gain", Initializer::ones(d_model));
  n.bias = store.add(prefix + ".bias", Initializer::zeros(d_model));
  return n;
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

Tensor dropout(const Tensor& x, double p, std::mt19937_64* rng) {
  if (p <= 0.0 || rng == nullptr) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor sublayer(const Tensor& x, const std::function<Tensor(const Tensor&)>& f,
                const LayerNorm& norm, double dropout_p, std::mt19937_64* rng) {
  Tensor fx = f(x);
  if (fx.shape() != x.shape()) {
    throw ShapeError("sublayer: function changed shape " + shape_str(x.shape()) + " -> " +
                     shape_str(fx.shape()));
  }
  return norm.forward(add(x, dropout(fx, dropout_p, rng)));
}

}  // namespace delib::nn
