#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "delib/data.hpp"
#include "delib/model.hpp"
#include "delib/nn.hpp"
#include "delib/tensor.hpp"

namespace delib::train {

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t max_steps = 1000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;
  std::size_t eval_interval = 100;
  std::uint64_t seed = 1;
  std::string checkpoint_dir;  // empty: keep checkpoints in memory only
  double val_fraction = 0.1;   // share of conversations held out
  std::size_t min_count = 1;
  std::size_t max_vocab = 20000;
  std::size_t utterance_cap = 50;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Summed negative log-likelihoods. `total` carries the graph for backward.
struct LossTerms {
  Tensor total;
  double l_mle = 0.0;
  double l_mle1 = 0.0;
  double l_mle2 = 0.0;
  std::size_t tokens = 0;  // non-PAD gold tokens per pass

  double mean() const { return tokens ? l_mle / static_cast<double>(tokens) : 0.0; }
  double mean1() const { return tokens ? l_mle1 / static_cast<double>(tokens) : 0.0; }
  double mean2() const { return tokens ? l_mle2 / static_cast<double>(tokens) : 0.0; }
};

/// Summed NLL of `gold` under row-wise logits; PAD gold positions are skipped.
Tensor nll_sum(const Tensor& logits, std::span<const int> gold, std::size_t* tokens = nullptr);

/// L_mle = L_mle1 + L_mle2. An undefined `second` means a single-pass
/// model, for which L_mle2 = 0. Throws ShapeError on length mismatch.
LossTerms loss_two_pass(const Tensor& first, const Tensor& second, std::span<const int> gold);

/// Teacher-forced loss of one example; gold is target[1..].
LossTerms example_loss(const model::Model& model, const data::TrainingExample& example,
                       const data::TokenIds* draft_override = nullptr);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// One bias-corrected update of every parameter from its gradient.
  /// Parameters without a gradient buffer count as zero gradient. Throws
  /// NumericError naming the first parameter with a non-finite gradient,
  /// before anything is modified.
  void step(nn::ParamStore& params);

  const AdamOptions& options() const { return options_; }
  std::size_t t() const { return t_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  // Restoring from a checkpoint.
  void restore(std::size_t t, std::map<std::string, Moments> moments);

 private:
  AdamOptions options_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

double grad_norm(const nn::ParamStore& params);
/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(nn::ParamStore& params, double max_norm);

struct Dataset {
  data::Vocab vocab;
  std::vector<data::TrainingExample> train;
  std::vector<data::TrainingExample> val;
};

/// Merges turns, splits conversations into train/validation with a seeded
/// shuffle, builds the vocabulary from the training side and windows both.
Dataset prepare_dataset(std::span<const data::Conversation> corpus, std::size_t window,
                        std::size_t max_doc_len, const TrainConfig& config);

struct MetricsRow {
  std::size_t step = 0;
  double l_mle = 0.0;  // per-token means over the steps since the last row
  double l_mle1 = 0.0;
  double l_mle2 = 0.0;
  double val_ppl_pass1 = 0.0;
  double val_ppl_pass2 = 0.0;
  double wall_ms = 0.0;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);

struct TrainResult {
  std::vector<MetricsRow> history;
  std::vector<double> step_losses;  // batch per-token L_mle at every step
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_val_ppl = 0.0;
};

/// Thrown when the loss or a gradient turns non-finite. The model still
/// holds the parameters from before the failing step.
struct DivergenceError : NumericError {
  using NumericError::NumericError;
};

struct TrainHooks {
  std::ostream* metrics = nullptr;                       // CSV sink
  std::function<void(const MetricsRow&)> on_row;         // progress display
};

/// Mini-batch training with per-token-mean batch loss, clipping and Adam.
/// Validation perplexity is computed every eval_interval steps and at the
/// end; the best-validation parameters are written to
/// checkpoint_dir/best and restored into `model` on return (the last
/// parameters when there is no validation set).
TrainResult train(model::Model& model, const Dataset& dataset, const TrainConfig& config,
                  Adam& adam, const TrainHooks& hooks = {});

}  // namespace delib::train
