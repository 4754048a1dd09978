#include <doctest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "delib/data.hpp"
#include "delib/gradcheck.hpp"
#include "delib/model.hpp"
#include "delib/nn.hpp"
#include "delib/ops.hpp"

using namespace delib;
using nn::AttentionMask;
using nn::MultiHeadAttention;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void set_identity(Tensor& w) {
  auto d = w.mutable_data();
  const std::size_t n = w.shape()[0];
  std::fill(d.begin(), d.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
}

MultiHeadAttention identity_attention(nn::ParamStore& store, std::size_t d, std::size_t h) {
  nn::Initializer init(1);
  auto mha = MultiHeadAttention::create(store, "a", d, h, init);
  for (Tensor* w : {&mha.w_q, &mha.w_k, &mha.w_v, &mha.w_o}) set_identity(*w);
  return mha;
}

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  std::vector<double> v(r * c);
  for (auto& x : v) x = d(rng);
  return Tensor({r, c}, std::move(v));
}

}  // namespace

TEST_CASE("positional encoding") {
  const Tensor pe = nn::positional_encoding(5, 6);
  CHECK(pe.shape() == Shape{5, 6});
  for (std::size_t j = 0; j < 6; ++j) CHECK(pe.at(0, j) == (j % 2 == 0 ? 0.0 : 1.0));
  const double sin1 = static_cast<double>(boost::multiprecision::sin(boost::multiprecision::cpp_dec_float_50(1)));
  CHECK(std::abs(sin1 - 0.84147098480789650665) < 1e-15);
  CHECK(std::abs(pe.at(1, 0) - sin1) < 1e-9);
  for (double v : values(nn::positional_encoding(40, 16))) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(nn::positional_encoding(3, 5), ConfigError);
}

TEST_CASE("position table agrees with direct computation, also past its length") {
  nn::PositionTable table(4, 6);
  CHECK(values(table.rows(3)) == values(nn::positional_encoding(3, 6)));
  CHECK(values(table.rows(9)) == values(nn::positional_encoding(9, 6)));
}

TEST_CASE("embed_sequence") {
  const std::size_t d = 4;
  std::mt19937_64 rng(2);
  Tensor table = random_matrix(rng, 6, d);
  nn::PositionTable pe(16, d);

  SUBCASE("empty sequence") {
    const Tensor e = nn::embed_sequence(std::vector<int>{}, table, pe);
    CHECK(e.shape() == Shape{0, d});
  }
  SUBCASE("single BOS adds the position-0 pattern") {
    const Tensor e = nn::embed_sequence(std::vector<int>{data::kBos}, table, pe);
    const double pattern[4] = {0, 1, 0, 1};
    for (std::size_t j = 0; j < d; ++j) CHECK(e.at(0, j) == table.at(data::kBos, j) + pattern[j]);
  }
  SUBCASE("equal ids differ exactly by PE(1) - PE(0)") {
    const Tensor e = nn::embed_sequence(std::vector<int>{5, 5}, table, pe);
    const Tensor p = nn::positional_encoding(2, d);
    for (std::size_t j = 0; j < d; ++j)
      CHECK(std::abs((e.at(1, j) - e.at(0, j)) - (p.at(1, j) - p.at(0, j))) < 1e-15);
  }
  SUBCASE("invalid id") { CHECK_THROWS_AS(nn::embed_sequence(std::vector<int>{6}, table, pe), IndexError); }
}

TEST_CASE("multi-head attention examples") {
  nn::ParamStore store;

  SUBCASE("a single key returns its value row") {
    auto mha = identity_attention(store, 4, 2);
    Tensor q({2, 4}, {1, 2, 3, 4, -1, 0, 2, 5});
    Tensor v({1, 4}, {0.5, -1.5, 2.0, 3.0});
    const Tensor out = mha.forward(q, v, v);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out.at(r, j) - v.at(0, j)) < 1e-15);
  }
  SUBCASE("q=1, m=2 brute force") {
    auto mha = identity_attention(store, 2, 1);
    Tensor q({1, 2}, {0.3, -0.8});
    Tensor k({2, 2}, {1.0, 0.5, -0.2, 0.9});
    Tensor v({2, 2}, {1.0, 2.0, 3.0, 4.0});
    const double s0 = (0.3 * 1.0 - 0.8 * 0.5) / std::sqrt(2.0);
    const double s1 = (0.3 * -0.2 - 0.8 * 0.9) / std::sqrt(2.0);
    const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
    const double w1 = 1.0 - w0;
    const Tensor out = mha.forward(q, k, v);
    CHECK(std::abs(out.at(0, 0) - (w0 * 1.0 + w1 * 3.0)) < 1e-9);
    CHECK(std::abs(out.at(0, 1) - (w0 * 2.0 + w1 * 4.0)) < 1e-9);
  }
  SUBCASE("default width and heads give d_k = 64") {
    const model::ModelConfig c;
    CHECK(c.d_model == 512);
    CHECK(c.heads == 8);
    nn::Initializer init(0);
    CHECK(MultiHeadAttention::create(store, "big", c.d_model, c.heads, init).d_k() == 64);
  }
  SUBCASE("indivisible width") {
    nn::Initializer init(0);
    CHECK_THROWS_AS(MultiHeadAttention::create(store, "bad", 6, 4, init), ConfigError);
  }
  SUBCASE("fully masked query row") {
    auto mha = identity_attention(store, 2, 1);
    Tensor x({2, 2}, {1, 2, 3, 4});
    AttentionMask m{2, 2, {1, 1, 0, 0}};
    CHECK_THROWS_AS(mha.forward(x, x, x, &m), nn::DegenerateMaskError);
  }
}

TEST_CASE("property: attention weights normalize and ignore masked keys") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    nn::ParamStore store;
    nn::Initializer init(rng());
    auto mha = MultiHeadAttention::create(store, "a", 8, 2, init);
    const std::size_t q = 1 + rng() % 4, m = 1 + rng() % 6;
    std::vector<int> keys(m);
    for (auto& t : keys) t = static_cast<int>(rng() % 3);  // id 0 is padding
    keys[rng() % m] = 7;
    const auto mask = AttentionMask::key_padding(q, keys, data::kPad);
    std::vector<Tensor> w;
    mha.forward(random_matrix(rng, q, 8, 3), random_matrix(rng, m, 8, 3), random_matrix(rng, m, 8, 3), &mask, &w);
    REQUIRE(w.size() == 2);
    for (const auto& p : w) {
      for (std::size_t r = 0; r < q; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
          if (keys[c] == data::kPad) CHECK(p.at(r, c) < 1e-8);
          else sum += p.at(r, c);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("property: permuting key/value rows together leaves the output unchanged") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    nn::ParamStore store;
    nn::Initializer init(rng());
    auto mha = MultiHeadAttention::create(store, "a", 8, 4, init);
    const std::size_t m = 2 + rng() % 5;
    Tensor q = random_matrix(rng, 3, 8), kv = random_matrix(rng, m, 8), vv = random_matrix(rng, m, 8);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pk, pv;
    for (auto i : perm) {
      pk.insert(pk.end(), kv.data().begin() + i * 8, kv.data().begin() + (i + 1) * 8);
      pv.insert(pv.end(), vv.data().begin() + i * 8, vv.data().begin() + (i + 1) * 8);
    }
    const auto a = values(mha.forward(q, kv, vv));
    const auto b = values(mha.forward(q, Tensor({m, 8}, pk), Tensor({m, 8}, pv)));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-10);
  }
}

TEST_CASE("property: a mask admitting only key j returns value row j through W_V and W_O") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    nn::ParamStore store;
    nn::Initializer init(rng());
    auto mha = MultiHeadAttention::create(store, "a", 6, 3, init);
    const std::size_t m = 2 + rng() % 4, j = rng() % m;
    Tensor q = random_matrix(rng, 2, 6), k = random_matrix(rng, m, 6), v = random_matrix(rng, m, 6);
    AttentionMask mask{2, m, std::vector<char>(2 * m, 0)};
    mask.allowed[j] = mask.allowed[m + j] = 1;
    const Tensor out = mha.forward(q, k, v, &mask);
    const Tensor expect = matmul(matmul(slice(v, 0, j, j + 1), mha.w_v), mha.w_o);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(out.at(r, c) - expect.at(0, c)) < 1e-10);
  }
  SUBCASE("identity projections give the raw row") {
    nn::ParamStore store;
    auto mha = identity_attention(store, 4, 2);
    Tensor x = random_matrix(rng, 3, 4);
    AttentionMask mask{3, 3, {0, 1, 0, 0, 1, 0, 0, 1, 0}};
    const Tensor out = mha.forward(x, x, x, &mask);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(out.at(r, c) - x.at(1, c)) < 1e-10);
  }
}

TEST_CASE("causal mask") {
  const std::vector<int> tokens{2, 5, 0, 6};
  const auto m = AttentionMask::causal(tokens, data::kPad);
  CHECK(m.at(0, 0));
  CHECK_FALSE(m.at(0, 1));
  CHECK(m.at(3, 1));
  CHECK_FALSE(m.at(3, 2));  // padding
  CHECK(m.at(3, 3));
}

TEST_CASE("feed-forward of zero is b2 + relu(b1) W2 exactly") {
  nn::ParamStore store;
  nn::Initializer init(4);
  auto ffn = nn::FeedForward::create(store, "f", 3, 5, init);
  std::mt19937_64 rng(4);
  for (Tensor* b : {&ffn.b1, &ffn.b2}) {
    auto d = b->mutable_data();
    for (auto& x : d) x = std::uniform_real_distribution<double>(-1, 1)(rng);
  }
  const Tensor out = ffn.forward(Tensor({1, 3}));
  for (std::size_t c = 0; c < 3; ++c) {
    double expect = 0.0;
    for (std::size_t j = 0; j < 5; ++j) expect += std::max(0.0, ffn.b1.at(j)) * ffn.w2.at(j, c);
    expect = ffn.b2.at(c) + expect;
    CHECK(out.at(0, c) == expect);
  }
  CHECK(ffn.forward(Tensor({2, 3})).shape() == Shape{2, 3});
}

TEST_CASE("sublayer") {
  nn::ParamStore store;
  auto norm = nn::LayerNorm::create(store, "n", 4);
  std::mt19937_64 rng(6);
  Tensor x = random_matrix(rng, 2, 4);

  SUBCASE("zero function reduces to layer norm") {
    const Tensor y = nn::sublayer(x, [](const Tensor& v) { return scale(v, 0.0); }, norm);
    CHECK(values(y) == values(norm.forward(add(x, scale(x, 0.0)))));
    const auto ln = values(norm.forward(x));
    const auto sy = values(y);
    for (std::size_t i = 0; i < ln.size(); ++i) CHECK(sy[i] == ln[i]);
  }
  SUBCASE("large inputs stay finite") {
    Tensor big = random_matrix(rng, 3, 4, 1e3);
    for (double v : values(nn::sublayer(big, [](const Tensor& v) { return v; }, norm))) CHECK(std::isfinite(v));
  }
  SUBCASE("residual path carries gradient when f is dead") {
    Tensor xl(Shape{2, 4}, values(x), true);
    Tensor w = random_matrix(rng, 2, 4);
    auto f = [&] {
      // relu(-relu(v)) is identically zero.
      return reduce_sum(mul(nn::sublayer(xl, [](const Tensor& v) { return relu(scale(relu(v), -1.0)); }, norm), w));
    };
    f().backward();
    double norm_sq = 0.0;
    for (double g : xl.grad()) norm_sq += g * g;
    CHECK(norm_sq > 0.0);
    CHECK(grad_check(f, {xl}).passed);
  }
  SUBCASE("shape-changing function is rejected") {
    CHECK_THROWS_AS(nn::sublayer(x, [](const Tensor& v) { return slice(v, 1, 0, 2); }, norm), ShapeError);
  }
}

TEST_CASE("dropout is identity at p = 0 and rescales kept units") {
  std::mt19937_64 rng(1);
  Tensor x({1, 1000}, std::vector<double>(1000, 1.0));
  CHECK(values(nn::dropout(x, 0.0, &rng)) == values(x));
  for (double v : values(nn::dropout(x, 0.5, &rng))) CHECK((v == 0.0 || v == 2.0));
}
