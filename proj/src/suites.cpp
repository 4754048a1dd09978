#include "delib/suites.hpp"

#include <cmath>
#include <functional>

#include "delib/nn.hpp"
#include "delib/ops.hpp"
#include "delib/train.hpp"

namespace delib::suites {

namespace {

Shape random_shape(std::mt19937_64& rng) {
  static constexpr std::size_t kMax[3] = {4, 5, 6};
  const std::size_t rank = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
  Shape s;
  for (std::size_t i = 0; i < rank; ++i) s.push_back(std::uniform_int_distribution<std::size_t>(1, kMax[i])(rng));
  return s;
}

Shape random_matrix_shape(std::mt19937_64& rng) {
  return {std::uniform_int_distribution<std::size_t>(1, 4)(rng), std::uniform_int_distribution<std::size_t>(1, 5)(rng)};
}

// Values bounded away from zero so relu never sits on its kink.
Tensor random_tensor(std::mt19937_64& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    do x = dist(rng);
    while (std::abs(x) < 0.05);
  }
  return Tensor(shape, std::move(v), true);
}

Tensor weighted_sum(const Tensor& y, const Tensor& w) { return reduce_sum(mul(y, w)); }

CheckResult check(const std::string& name, std::mt19937_64& rng, const std::vector<Tensor>& inputs,
                  const std::function<Tensor()>& op) {
  Shape out_shape;
  {
    NoGradGuard probe;
    out_shape = op().shape();
  }
  const Tensor w = random_tensor(rng, out_shape).detach();
  return {name, grad_check([&] { return weighted_sum(op(), w); }, inputs)};
}

}  // namespace

std::vector<CheckResult> op_gradcheck_suite(std::uint64_t seed, std::size_t trials) {
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> out;
  for (std::size_t t = 0; t < trials; ++t) {
    {
      const Shape sa = random_matrix_shape(rng);
      const Shape sb{sa[1], std::uniform_int_distribution<std::size_t>(1, 6)(rng)};
      Tensor a = random_tensor(rng, sa), b = random_tensor(rng, sb);
      out.push_back(check("matmul", rng, {a, b}, [=] { return matmul(a, b); }));
    }
    {
      Tensor a = random_tensor(rng, random_matrix_shape(rng));
      out.push_back(check("transpose", rng, {a}, [=] { return transpose(a); }));
    }
    {
      const Shape s = random_shape(rng);
      Tensor a = random_tensor(rng, s), b = random_tensor(rng, s);
      out.push_back(check("add", rng, {a, b}, [=] { return add(a, b); }));
      out.push_back(check("mul", rng, {a, b}, [=] { return mul(a, b); }));
    }
    {
      const Shape s = random_shape(rng);
      Tensor a = random_tensor(rng, s), b = random_tensor(rng, {s.back()});
      out.push_back(check("add_bias", rng, {a, b}, [=] { return add_bias(a, b); }));
    }
    {
      Tensor a = random_tensor(rng, random_shape(rng));
      out.push_back(check("scale", rng, {a}, [=] { return scale(a, -1.7); }));
      out.push_back(check("relu", rng, {a}, [=] { return relu(a); }));
    }
    {
      Tensor a = random_tensor(rng, random_shape(rng), 0.5, 2.0);
      out.push_back(check("log", rng, {a}, [=] { return log(a); }));
    }
    {
      const Shape s = random_shape(rng);
      Tensor a = random_tensor(rng, s, -3.0, 3.0);
      const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, s.size() - 1)(rng);
      out.push_back(check("softmax", rng, {a}, [=] { return softmax(a, axis); }));
      out.push_back(check("log_softmax", rng, {a}, [=] { return log_softmax(a); }));
    }
    {
      Shape s = random_shape(rng);
      const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, s.size() - 1)(rng);
      Shape s2 = s;
      s2[axis] = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
      Tensor a = random_tensor(rng, s), b = random_tensor(rng, s2);
      out.push_back(check("concat", rng, {a, b}, [=] {
        const Tensor parts[] = {a, b};
        return concat(parts, axis);
      }));
    }
    {
      const Shape s = random_shape(rng);
      const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, s.size() - 1)(rng);
      const std::size_t begin = std::uniform_int_distribution<std::size_t>(0, s[axis] - 1)(rng);
      const std::size_t end = std::uniform_int_distribution<std::size_t>(begin + 1, s[axis])(rng);
      Tensor a = random_tensor(rng, s);
      out.push_back(check("slice", rng, {a}, [=] { return slice(a, axis, begin, end); }));
    }
    {
      Tensor table = random_tensor(rng, random_matrix_shape(rng));
      std::vector<int> ids(std::uniform_int_distribution<std::size_t>(1, 6)(rng));
      for (auto& id : ids) id = std::uniform_int_distribution<int>(0, static_cast<int>(table.shape()[0]) - 1)(rng);
      out.push_back(check("embedding_gather", rng, {table}, [=] { return embedding_gather(table, ids); }));
    }
    {
      Tensor a = random_tensor(rng, random_shape(rng));
      out.push_back(check("reduce_sum", rng, {a}, [=] { return reduce_sum(a); }));
    }
    {
      const Shape s = random_shape(rng);
      Tensor a = random_tensor(rng, s, -2.0, 2.0), g = random_tensor(rng, {s.back()}),
             b = random_tensor(rng, {s.back()});
      if (s.back() > 1) out.push_back(check("layer_norm", rng, {a, g, b}, [=] { return layer_norm(a, g, b); }));
    }
    {
      Tensor a = random_tensor(rng, random_matrix_shape(rng));
      std::vector<int> idx(a.shape()[0]);
      for (auto& i : idx) i = std::uniform_int_distribution<int>(-1, static_cast<int>(a.shape()[1]) - 1)(rng);
      out.push_back(check("pick", rng, {a}, [=] { return pick(a, idx); }));
    }
    {
      nn::ParamStore store;
      nn::Initializer init(rng());
      auto mha = nn::MultiHeadAttention::create(store, "mha", 4, 2, init);
      Tensor q = random_tensor(rng, {3, 4}), kv = random_tensor(rng, {5, 4});
      const std::vector<int> keys = {5, 6, 0, 7, 8};
      const auto mask = nn::AttentionMask::key_padding(3, keys, 0);
      std::vector<Tensor> inputs{q, kv, mha.w_q, mha.w_k, mha.w_v, mha.w_o};
      out.push_back(check("multi_head_attention", rng, inputs, [=] { return mha.forward(q, kv, kv, &mask); }));
    }
    {
      nn::ParamStore store;
      nn::Initializer init(rng());
      auto ffn = nn::FeedForward::create(store, "ffn", 4, 6, init);
      auto norm = nn::LayerNorm::create(store, "norm", 4);
      Tensor x = random_tensor(rng, {3, 4});
      std::vector<Tensor> inputs{x, ffn.w1, ffn.b1, ffn.w2, ffn.b2, norm.gain, norm.bias};
      out.push_back(check("ffn_sublayer", rng, inputs, [=] {
        return nn::sublayer(x, [&](const Tensor& h) { return ffn.forward(h); }, norm);
      }));
    }
  }
  return out;
}

model::ModelConfig tiny_config(model::Variant variant) {
  model::ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.d_ff = 16;
  c.sa_layers = c.ite_layers = c.dec_layers = 1;
  c.vocab_size = 11;
  c.window = 3;
  c.variant = variant;
  c.max_doc_len = 16;
  return c;
}

data::TrainingExample random_example(std::mt19937_64& rng, std::size_t vocab, std::size_t turns) {
  auto seq = [&](std::size_t lo, std::size_t hi) {
    data::TokenIds ids(std::uniform_int_distribution<std::size_t>(lo, hi)(rng));
    for (auto& id : ids) id = std::uniform_int_distribution<int>(data::kNumSpecials, static_cast<int>(vocab) - 1)(rng);
    return ids;
  };
  data::TrainingExample ex;
  for (std::size_t k = 0; k < turns; ++k) {
    ex.context.push_back(seq(2, 4));
    ex.context_docs.push_back(seq(3, 5));
  }
  ex.target = seq(2, 4);
  ex.target.insert(ex.target.begin(), data::kBos);
  ex.target.push_back(data::kEos);
  ex.target_doc = seq(3, 5);
  return ex;
}

// Whole-model losses are sums of a few NLL terms (magnitude ~10), so the
// central difference carries roundoff near 1e-16 * 10 / 1e-5 = 1e-10.
// Coordinates whose true gradient is below ~1e-6 are therefore judged on
// absolute error through a 1e-5 floor.
GradCheckOptions model_gradcheck_options() {
  GradCheckOptions o;
  o.floor = 1e-5;
  return o;
}

std::vector<CheckResult> model_gradcheck_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  for (auto variant : {model::Variant::kIteDd, model::Variant::kIteCkad, model::Variant::kKat}) {
    std::mt19937_64 rng(seed);
    model::Model m(tiny_config(variant), seed);
    const data::TrainingExample ex = random_example(rng, m.config().vocab_size, 2);
    data::TokenIds draft;
    if (variant == model::Variant::kIteDd) {
      NoGradGuard g;
      draft = m.forward(ex).draft;
    }
    std::vector<Tensor> params;
    for (const auto& [_, p] : m.params().all()) params.push_back(p);
    auto f = [&] { return train::example_loss(m, ex, draft.empty() ? nullptr : &draft).total; };
    out.push_back({"model " + model::to_string(variant), grad_check(f, params, model_gradcheck_options())});
  }
  return out;
}

}  // namespace delib::suites
