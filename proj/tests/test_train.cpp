#include <doctest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "delib/checkpoint.hpp"
#include "delib/ops.hpp"
#include "delib/suites.hpp"
#include "delib/train.hpp"

using namespace delib;
using namespace delib::train;
using model::Model;
using model::Variant;
namespace fs = std::filesystem;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v, bool grad = false) {
  return Tensor(Shape{r, c}, std::move(v), grad);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("delib_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Dataset tiny_dataset(std::size_t conversations, std::uint64_t seed) {
  const auto corpus = data::gen_fact_copy_task(seed, conversations, 2, 10);
  TrainConfig cfg;
  cfg.val_fraction = 0.25;
  cfg.seed = seed;
  return prepare_dataset(corpus, 3, 16, cfg);
}

model::ModelConfig tiny_for(const Dataset& ds, Variant v) {
  auto c = suites::tiny_config(v);
  c.vocab_size = ds.vocab.size();
  return c;
}

}  // namespace

TEST_CASE("negative log-likelihood") {
  SUBCASE("uniform logits give L ln V") {
    for (std::size_t V : {2u, 7u, 100u}) {
      const std::vector<int> gold{1, 1, static_cast<int>(V) - 1};
      std::size_t tokens = 0;
      const double l = nll_sum(Tensor(Shape{3, V}), gold, &tokens).item();
      CHECK(tokens == 3);
      CHECK(std::abs(l - 3.0 * std::log(static_cast<double>(V))) < 1e-12);
    }
  }
  SUBCASE("a confident correct prediction costs almost nothing") {
    const Tensor logits = matrix(1, 3, {0.0, 0.0, 60.0});
    CHECK(nll_sum(logits, std::vector<int>{2}).item() < 1e-25);
  }
  SUBCASE("high-precision oracle") {
    using Big = boost::multiprecision::cpp_dec_float_50;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> dist(-6.0, 6.0);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t rows = 1 + rng() % 5, V = 4 + rng() % 6;
      std::vector<double> v(rows * V);
      for (auto& x : v) x = dist(rng);
      std::vector<int> gold(rows);
      for (auto& g : gold) g = static_cast<int>(rng() % V);
      gold[0] = 1;  // keep at least one non-PAD position
      Big expected = 0;
      for (std::size_t r = 0; r < rows; ++r) {
        if (gold[r] == data::kPad) continue;
        Big z = 0;
        for (std::size_t c = 0; c < V; ++c) z += exp(Big(v[r * V + c]));
        expected += log(z) - Big(v[r * V + gold[r]]);
      }
      CHECK(std::abs(nll_sum(matrix(rows, V, v), gold).item() - expected.convert_to<double>()) < 1e-10);
    }
  }
  SUBCASE("PAD gold positions contribute nothing") {
    const Tensor logits = matrix(3, 4, {1, 2, 3, 4, 9, 9, 9, 9, 0, 1, 0, 1});
    std::size_t tokens = 0;
    const double with_pad = nll_sum(logits, std::vector<int>{2, data::kPad, 3}, &tokens).item();
    CHECK(tokens == 2);
    const double direct = nll_sum(slice(logits, 0, 0, 1), std::vector<int>{2}).item() +
                          nll_sum(slice(logits, 0, 2, 3), std::vector<int>{3}).item();
    CHECK(std::abs(with_pad - direct) < 1e-14);
  }
  SUBCASE("length mismatch") { CHECK_THROWS_AS(nll_sum(Tensor(Shape{2, 4}), std::vector<int>{1}), ShapeError); }
}

TEST_CASE("two-pass loss") {
  const Tensor a = matrix(2, 5, {0.1, 0.5, -1.0, 2.0, 0.0, 1.0, 1.0, 0.3, -0.2, 0.9});
  const Tensor b = matrix(2, 5, {2.0, -0.5, 0.0, 0.4, 1.5, 0.2, 0.1, 3.0, -2.0, 0.0});
  const std::vector<int> gold{3, 2};
  const auto t = loss_two_pass(a, b, gold);
  CHECK(t.l_mle == t.l_mle1 + t.l_mle2);
  CHECK(t.l_mle1 == nll_sum(a, gold).item());
  CHECK(t.l_mle2 == nll_sum(b, gold).item());
  CHECK(t.tokens == 2);
  CHECK(t.mean() == doctest::Approx(t.l_mle / 2.0));

  const auto single = loss_two_pass(a, Tensor(), gold);
  CHECK(single.l_mle2 == 0.0);
  CHECK(single.l_mle == single.l_mle1);
  CHECK_THROWS_AS(loss_two_pass(a, Tensor(Shape{3, 5}), std::vector<int>{1, 1}), ShapeError);
}

TEST_CASE("property: pass-2 loss has no gradient path into pass-1-only parameters") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    Model m(suites::tiny_config(Variant::kIteDd), 40 + trial);
    const auto ex = suites::random_example(rng, 11, 2);
    const auto draft = m.forward(ex).draft;
    m.params().zero_grad();
    const auto out = m.forward(ex, &draft);
    const std::span<const int> gold(ex.target.data() + 1, ex.target.size() - 1);
    nll_sum(out.second, gold).backward();
    for (const auto& [path, p] : m.params().all()) {
      CAPTURE(path);
      double n = 0.0;
      for (double g : p.grad()) n += g * g;
      if (path.rfind("dec1.", 0) == 0 || path.rfind("ite.", 0) == 0) CHECK(n == 0.0);
      if (path.rfind("dec2.", 0) == 0) CHECK(n > 0.0);
    }
  }
}

TEST_CASE("property: trailing padding leaves the loss unchanged") {
  std::mt19937_64 rng(32);
  for (auto v : {Variant::kIteDd, Variant::kIteCkad, Variant::kKat}) {
    Model m(suites::tiny_config(v), 41);
    for (int trial = 0; trial < 5; ++trial) {
      const auto ex = suites::random_example(rng, 11, 2);
      auto padded = ex;
      padded.target.insert(padded.target.end(), 1 + rng() % 3, data::kPad);
      const auto a = example_loss(m, ex), b = example_loss(m, padded);
      CHECK(a.tokens == b.tokens);
      CHECK(std::abs(a.l_mle - b.l_mle) < 1e-12);
      CHECK(std::abs(a.l_mle1 - b.l_mle1) < 1e-12);
    }
  }
}

TEST_CASE("Adam") {
  auto scalar_store = [](double x) {
    nn::ParamStore s;
    s.add("x", Tensor(Shape{1}, std::vector<double>{x}, true));
    return s;
  };
  auto set_grad = [](nn::ParamStore& s, double g) {
    Tensor x = s.get("x");
    x.zero_grad();
    scale(x, g).backward();
  };

  SUBCASE("zero gradient leaves parameters unchanged") {
    auto s = scalar_store(0.7);
    Adam adam;
    for (int i = 0; i < 3; ++i) {
      set_grad(s, 0.0);
      adam.step(s);
    }
    CHECK(s.get("x").item() == 0.7);
  }
  SUBCASE("first step moves by the learning rate against the gradient") {
    for (double g : {1e-3, 0.5, -40.0}) {
      auto s = scalar_store(1.0);
      Adam adam;
      set_grad(s, g);
      adam.step(s);
      const double expected = -std::copysign(1e-3 * std::abs(g) / (std::abs(g) + 1e-8), g);
      CHECK(std::abs((s.get("x").item() - 1.0) - expected) < 1e-15);
      CHECK(std::abs(s.get("x").item() - 1.0) == doctest::Approx(1e-3).epsilon(1e-4));
    }
  }
  SUBCASE("two steps against a 50-digit oracle") {
    auto s = scalar_store(1.0);
    Adam adam;
    set_grad(s, 0.5);
    adam.step(s);
    CHECK(std::abs(s.get("x").item() - 0.99900000001999999960000000799999984) < 1e-12);
    set_grad(s, -0.2);
    adam.step(s);
    CHECK(std::abs(s.get("x").item() - 0.99865439418116510585362831277141081) < 1e-12);
    CHECK(adam.t() == 2);
  }
  SUBCASE("descends a quadratic") {
    auto s = scalar_store(-2.0);
    Adam adam(AdamOptions{0.05});
    double prev = std::pow(s.get("x").item() - 3.0, 2);
    for (int i = 0; i < 500; ++i) {
      Tensor x = s.get("x");
      x.zero_grad();
      const Tensor d = add(x, Tensor(Shape{1}, std::vector<double>{-3.0}));
      reduce_sum(mul(d, d)).backward();
      adam.step(s);
    }
    const double now = std::pow(s.get("x").item() - 3.0, 2);
    CHECK(now < prev * 1e-3);
  }
  SUBCASE("non-finite gradient is reported before any update") {
    nn::ParamStore s;
    s.add("a", Tensor(Shape{1}, std::vector<double>{1.0}, true));
    s.add("b", Tensor(Shape{1}, std::vector<double>{2.0}, true));
    Tensor a = s.get("a"), b = s.get("b");
    scale(a, 1.0).backward();
    scale(b, NAN).backward();
    Adam adam;
    try {
      adam.step(s);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find(" b") != std::string::npos);
    }
    CHECK(s.get("a").item() == 1.0);
    CHECK(adam.t() == 0);
  }
}

TEST_CASE("global gradient clipping") {
  nn::ParamStore s;
  s.add("a", Tensor(Shape{2}, std::vector<double>{1.0, 1.0}, true));
  s.add("b", Tensor(Shape{1}, std::vector<double>{1.0}, true));
  reduce_sum(mul(s.get("a"), Tensor(Shape{2}, std::vector<double>{3.0, 0.0}))).backward();
  scale(s.get("b"), 4.0).backward();
  CHECK(grad_norm(s) == doctest::Approx(5.0));
  CHECK(clip_grad_norm(s, 10.0) == doctest::Approx(5.0));
  CHECK(grad_norm(s) == doctest::Approx(5.0));
  CHECK(clip_grad_norm(s, 1.0) == doctest::Approx(5.0));
  CHECK(std::abs(grad_norm(s) - 1.0) < 1e-12);
  CHECK(s.get("a").grad()[0] == doctest::Approx(0.6));
  CHECK(s.get("b").grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("dataset preparation") {
  const auto corpus = data::gen_fact_copy_task(3, 40, 2, 10);
  TrainConfig cfg;
  cfg.val_fraction = 0.25;
  const auto a = prepare_dataset(corpus, 3, 16, cfg);
  const auto b = prepare_dataset(corpus, 3, 16, cfg);
  CHECK(a.vocab == b.vocab);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.train.size() == 30);
  CHECK(a.val.size() == 10);
  cfg.val_fraction = 0.0;
  CHECK(prepare_dataset(corpus, 3, 16, cfg).val.empty());
  CHECK_THROWS_AS(prepare_dataset(std::vector<data::Conversation>{}, 3, 16, cfg), DataError);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(prepare_dataset(corpus, 3, 16, cfg), ConfigError);
}

TEST_CASE("training loop") {
  const Dataset ds = tiny_dataset(24, 5);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_steps = 10;
  cfg.eval_interval = 4;
  cfg.learning_rate = 3e-3;

  SUBCASE("a fixed seed gives a bitwise-identical trajectory") {
    Model m1(tiny_for(ds, Variant::kIteDd), 7), m2(tiny_for(ds, Variant::kIteDd), 7);
    Adam a1(AdamOptions{cfg.learning_rate}), a2(AdamOptions{cfg.learning_rate});
    const auto r1 = train::train(m1, ds, cfg, a1);
    const auto r2 = train::train(m2, ds, cfg, a2);
    CHECK(r1.step_losses == r2.step_losses);
    for (const auto& [path, p] : m1.params().all()) CHECK(values(p) == values(m2.params().get(path)));
    REQUIRE(r1.history.size() == 3);
    CHECK(r1.history[0].step == 4);
    CHECK(r1.history[2].step == 10);
    CHECK(r1.history[0].val_ppl_pass2 > 0.0);
  }
  SUBCASE("metrics CSV") {
    Model m(tiny_for(ds, Variant::kIteCkad), 7);
    Adam adam(AdamOptions{cfg.learning_rate});
    std::ostringstream csv;
    TrainHooks hooks;
    hooks.metrics = &csv;
    train::train(m, ds, cfg, adam, hooks);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,L_mle,L_mle1,L_mle2,val_ppl_pass1,val_ppl_pass2,wall_ms");
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 6);
    }
    CHECK(rows == 3);
  }
  SUBCASE("loss decreases on a small task") {
    Model m(tiny_for(ds, Variant::kIteDd), 8);
    cfg.max_steps = 150;
    cfg.eval_interval = 150;
    Adam adam(AdamOptions{cfg.learning_rate});
    const auto r = train::train(m, ds, cfg, adam);
    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) {
      head += r.step_losses[i];
      tail += r.step_losses[r.step_losses.size() - 1 - i];
    }
    CHECK(tail < 0.8 * head);
  }
  SUBCASE("divergence stops training and keeps the last parameters") {
    Model m(tiny_for(ds, Variant::kIteDd), 9);
    m.params().all().at("embedding").mutable_data()[5 * m.config().d_model] = NAN;  // row of a frequent token
    cfg.checkpoint_dir = scratch("diverge").string();
    Adam adam;
    CHECK_THROWS_AS(train::train(m, ds, cfg, adam), DivergenceError);
    CHECK(fs::exists(fs::path(cfg.checkpoint_dir) / "last" / checkpoint::kManifestName));
    fs::remove_all(cfg.checkpoint_dir);
  }
}

TEST_CASE("checkpoints") {
  const Dataset ds = tiny_dataset(12, 6);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 3;
  for (auto v : {Variant::kIteDd, Variant::kIteCkad, Variant::kKat}) {
    CAPTURE(model::to_string(v));
    Model m(tiny_for(ds, v), 10);
    Adam adam;
    train::train(m, ds, cfg, adam);
    const fs::path dir = scratch("ckpt");
    checkpoint::save(dir, m, ds.vocab, cfg, &adam);

    auto loaded = checkpoint::load(dir);
    CHECK(loaded.model->config() == m.config());
    CHECK(loaded.vocab == ds.vocab);
    CHECK(loaded.train_config == cfg);
    CHECK(loaded.adam.t() == adam.t());
    CHECK(loaded.adam.moments().size() == adam.moments().size());
    for (const auto& [path, mom] : adam.moments()) {
      CHECK(loaded.adam.moments().at(path).m == mom.m);
      CHECK(loaded.adam.moments().at(path).v == mom.v);
    }
    const auto& ex = ds.train.front();
    CHECK(values(loaded.model->forward(ex).final_logits()) == values(m.forward(ex).final_logits()));

    // Saving the restored model reproduces the same bytes.
    const fs::path again = scratch("ckpt_again");
    checkpoint::save(again, *loaded.model, loaded.vocab, loaded.train_config, &loaded.adam);
    CHECK(read_bytes(dir / checkpoint::kBlobName) == read_bytes(again / checkpoint::kBlobName));
    CHECK(read_bytes(dir / checkpoint::kManifestName) == read_bytes(again / checkpoint::kManifestName));
    fs::remove_all(again);

    fs::remove_all(dir);
  }
  CHECK_THROWS_AS(checkpoint::load(scratch("missing")), checkpoint::CheckpointError);
}

TEST_CASE("tampered checkpoints are rejected") {
  const Dataset ds = tiny_dataset(12, 6);
  Model m(tiny_for(ds, Variant::kIteDd), 10);
  const fs::path dir = scratch("tamper");
  checkpoint::save(dir, m, ds.vocab, TrainConfig{});
  auto manifest = nlohmann::json::parse(read_bytes(dir / checkpoint::kManifestName));
  const auto write = [&](const nlohmann::json& j) { std::ofstream(dir / checkpoint::kManifestName) << j.dump(); };
  auto bad = manifest;
  bad["tensors"][0]["shape"] = {1, 1};
  write(bad);
  CHECK_THROWS_AS(checkpoint::load(dir), checkpoint::CheckpointError);
  bad = manifest;
  bad["format_version"] = 99;
  write(bad);
  CHECK_THROWS_AS(checkpoint::load(dir), checkpoint::CheckpointError);
  bad = manifest;
  bad["tensors"].erase(bad["tensors"].size() - 1);
  write(bad);
  CHECK_THROWS_AS(checkpoint::load(dir), checkpoint::CheckpointError);
  write(manifest);
  const std::string blob = read_bytes(dir / checkpoint::kBlobName);
  std::ofstream(dir / checkpoint::kBlobName, std::ios::binary) << blob.substr(0, blob.size() / 2);
  CHECK_THROWS_AS(checkpoint::load(dir), checkpoint::CheckpointError);
  fs::remove_all(dir);
}
