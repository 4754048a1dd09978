#include "delib/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "delib/checkpoint.hpp"
#include "delib/eval.hpp"
#include "delib/ops.hpp"

namespace delib::train {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_steps == 0) throw ConfigError("max_steps must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in [0, 1)");
  if (min_count == 0) throw ConfigError("min_count must be positive");
  if (max_vocab == 0) throw ConfigError("max_vocab must be positive");
  if (utterance_cap == 0) throw ConfigError("utterance_cap must be positive");
}

Tensor nll_sum(const Tensor& logits, std::span<const int> gold, std::size_t* tokens) {
  if (logits.rank() != 2 || logits.shape()[0] != gold.size()) {
    throw ShapeError("loss: logits " + shape_str(logits.shape()) + " vs " + std::to_string(gold.size()) +
                     " gold tokens");
  }
  std::vector<int> index(gold.begin(), gold.end());
  std::size_t count = 0;
  for (auto& g : index) {
    if (g == data::kPad) g = -1;
    else ++count;
  }
  if (tokens) *tokens = count;
  return scale(reduce_sum(pick(log_softmax(logits), index)), -1.0);
}

LossTerms loss_two_pass(const Tensor& first, const Tensor& second, std::span<const int> gold) {
  LossTerms t;
  Tensor l1 = nll_sum(first, gold, &t.tokens);
  t.l_mle1 = l1.item();
  if (second.defined()) {
    if (second.shape() != first.shape()) {
      throw ShapeError("loss: pass logits differ in shape, " + shape_str(first.shape()) + " vs " +
                       shape_str(second.shape()));
    }
    Tensor l2 = nll_sum(second, gold);
    t.l_mle2 = l2.item();
    t.total = add(l1, l2);
  } else {
    t.total = l1;
  }
  t.l_mle = t.total.item();
  return t;
}

LossTerms example_loss(const model::Model& model, const data::TrainingExample& example,
                       const data::TokenIds* draft_override) {
  const model::PassLogits logits = model.forward(example, draft_override);
  const std::span<const int> gold(example.target.data() + 1, example.target.size() - 1);
  return loss_two_pass(logits.first, logits.second, gold);
}

void Adam::step(nn::ParamStore& params) {
  for (const auto& [path, p] : params.all()) {
    for (double g : p.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + path);
  }
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& [path, p] : params.all()) {
    auto& mom = moments_[path];
    if (mom.m.size() != p.numel()) {
      mom.m.assign(p.numel(), 0.0);
      mom.v.assign(p.numel(), 0.0);
    }
    const auto grad = p.grad();
    auto value = p.mutable_data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
      mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
      const double m_hat = mom.m[i] / c1;
      const double v_hat = mom.v[i] / c2;
      value[i] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
  }
}

void Adam::restore(std::size_t t, std::map<std::string, Moments> moments) {
  t_ = t;
  moments_ = std::move(moments);
}

double grad_norm(const nn::ParamStore& params) {
  double sq = 0.0;
  for (const auto& [_, p] : params.all())
    for (double g : p.grad()) sq += g * g;
  return std::sqrt(sq);
}

double clip_grad_norm(nn::ParamStore& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && std::isfinite(norm)) {
    const double f = max_norm / norm;
    for (auto& [_, p] : params.all()) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= f;
    }
  }
  return norm;
}

Dataset prepare_dataset(std::span<const data::Conversation> corpus, std::size_t window,
                        std::size_t max_doc_len, const TrainConfig& config) {
  config.validate();
  if (corpus.empty()) throw DataError("training corpus is empty");
  std::vector<data::Conversation> merged;
  merged.reserve(corpus.size());
  for (const auto& c : corpus) merged.push_back(data::merge_consecutive(c));

  std::vector<std::size_t> order(merged.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::floor(config.val_fraction * static_cast<double>(merged.size())));
  if (n_val >= merged.size()) n_val = merged.size() - 1;

  // Each split keeps corpus order; the shuffle only decides membership.
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(val_idx.begin(), val_idx.end());
  std::vector<char> is_val(merged.size(), 0);
  for (auto i : val_idx) is_val[i] = 1;
  std::vector<data::Conversation> train_convs, val_convs;
  for (std::size_t i = 0; i < merged.size(); ++i) (is_val[i] ? val_convs : train_convs).push_back(merged[i]);

  Dataset ds;
  ds.vocab = data::Vocab::build(data::corpus_token_lists(train_convs), config.min_count, config.max_vocab);
  const data::SequenceCaps caps{config.utterance_cap, max_doc_len};
  for (const auto& c : train_convs) {
    auto ex = data::make_examples(c, window, ds.vocab, caps);
    ds.train.insert(ds.train.end(), ex.begin(), ex.end());
  }
  for (const auto& c : val_convs) {
    auto ex = data::make_examples(c, window, ds.vocab, caps);
    ds.val.insert(ds.val.end(), ex.begin(), ex.end());
  }
  if (ds.train.empty()) throw DataError("training split produced no examples (need >= 2 turns)");
  return ds;
}

void write_metrics_header(std::ostream& out) {
  out << "step,L_mle,L_mle1,L_mle2,val_ppl_pass1,val_ppl_pass2,wall_ms\n";
}

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  const auto old = out.precision(10);
  out << r.step << ',' << r.l_mle << ',' << r.l_mle1 << ',' << r.l_mle2 << ',' << r.val_ppl_pass1 << ','
      << r.val_ppl_pass2 << ',' << r.wall_ms << '\n';
  out.precision(old);
  out.flush();
}

namespace {

using ParamSnapshot = std::vector<std::vector<double>>;

ParamSnapshot snapshot(const nn::ParamStore& params) {
  ParamSnapshot s;
  for (const auto& [_, p] : params.all()) s.emplace_back(p.data().begin(), p.data().end());
  return s;
}

void restore(nn::ParamStore& params, const ParamSnapshot& s) {
  std::size_t i = 0;
  for (auto& [_, p] : params.all()) {
    auto v = p.mutable_data();
    std::copy(s[i].begin(), s[i].end(), v.begin());
    ++i;
  }
}

}  // namespace

TrainResult train(model::Model& model, const Dataset& dataset, const TrainConfig& config, Adam& adam,
                  const TrainHooks& hooks) {
  config.validate();
  if (dataset.train.empty()) throw DataError("no training examples");
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };
  const bool has_val = !dataset.val.empty();
  const bool save_to_disk = !config.checkpoint_dir.empty();
  const std::filesystem::path ckpt_dir(config.checkpoint_dir);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  TrainResult result;
  ParamSnapshot best;
  double sum = 0.0, sum1 = 0.0, sum2 = 0.0;
  std::size_t window_tokens = 0;
  if (hooks.metrics) write_metrics_header(*hooks.metrics);

  model.set_training(true);
  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    model.params().zero_grad();
    std::vector<LossTerms> terms;
    std::size_t batch_tokens = 0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      terms.push_back(example_loss(model, dataset.train[order[cursor++]]));
      batch_tokens += terms.back().tokens;
    }
    std::vector<Tensor> totals;
    double l = 0.0, l1 = 0.0, l2 = 0.0;
    for (const auto& t : terms) {
      totals.push_back(t.total);
      l += t.l_mle;
      l1 += t.l_mle1;
      l2 += t.l_mle2;
    }
    if (!std::isfinite(l)) {
      model.set_training(false);
      if (save_to_disk) checkpoint::save(ckpt_dir / "last", model, dataset.vocab, config, &adam);
      throw DivergenceError("loss became non-finite at step " + std::to_string(step) +
                            (save_to_disk ? "; last good parameters in " + (ckpt_dir / "last").string() : ""));
    }
    const double denom = static_cast<double>(std::max<std::size_t>(batch_tokens, 1));
    Tensor batch_loss = scale(reduce_sum(concat(totals, 0)), 1.0 / denom);
    batch_loss.backward();
    clip_grad_norm(model.params(), config.clip_norm);
    try {
      adam.step(model.params());
    } catch (const NumericError& e) {
      model.set_training(false);
      throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step));
    }

    result.step_losses.push_back(l / denom);
    sum += l;
    sum1 += l1;
    sum2 += l2;
    window_tokens += batch_tokens;
    result.steps = step;

    if (step % config.eval_interval == 0 || step == config.max_steps) {
      MetricsRow row;
      row.step = step;
      const double wt = static_cast<double>(std::max<std::size_t>(window_tokens, 1));
      row.l_mle = sum / wt;
      row.l_mle1 = sum1 / wt;
      row.l_mle2 = sum2 / wt;
      sum = sum1 = sum2 = 0.0;
      window_tokens = 0;
      model.set_training(false);
      if (has_val) {
        const auto ppl = eval::perplexity(model, dataset.val);
        row.val_ppl_pass1 = ppl.pass1;
        row.val_ppl_pass2 = ppl.pass2;
        if (result.best_step == 0 || ppl.final_ppl() < result.best_val_ppl) {
          result.best_step = step;
          result.best_val_ppl = ppl.final_ppl();
          best = snapshot(model.params());
          if (save_to_disk) checkpoint::save(ckpt_dir / "best", model, dataset.vocab, config, &adam);
        }
      }
      model.set_training(true);
      row.wall_ms = elapsed_ms();
      result.history.push_back(row);
      if (hooks.metrics) write_metrics_row(*hooks.metrics, row);
      if (hooks.on_row) hooks.on_row(row);
    }
  }
  model.set_training(false);
  if (save_to_disk) checkpoint::save(ckpt_dir / "last", model, dataset.vocab, config, &adam);
  if (has_val && !best.empty()) {
    restore(model.params(), best);
  } else {
    result.best_step = result.steps;
    if (save_to_disk) checkpoint::save(ckpt_dir / "best", model, dataset.vocab, config, &adam);
  }
  return result;
}

}  // namespace delib::train
