#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "delib/data.hpp"
#include "delib/model.hpp"

namespace delib::eval {

struct DecodeConfig {
  std::size_t beam_size = 5;
  std::size_t max_len = 30;

  bool operator==(const DecodeConfig&) const = default;
};

/// Log-probabilities of every next token given a prefix that starts with BOS.
using StepFn = std::function<std::vector<double>(std::span<const int> prefix)>;

struct Hypothesis {
  data::TokenIds tokens;  // without BOS; ends in EOS when finished
  double score = 0.0;     // summed log-probability
  bool finished = false;
};

/// Length-unnormalized beam search. Candidates rank by score, then lower
/// token id, then earlier parent hypothesis. Finished hypotheses leave the
/// beam for a pool; the pool's best is returned if it is nonempty, else the
/// best live hypothesis after `max_len` tokens. `eos` < 0 disables retiring.
Hypothesis beam_search(const StepFn& step, std::size_t beam, std::size_t max_len, int bos, int eos);

/// Step function over one of the model's final or first decoding passes.
StepFn first_pass_step(const model::Model& model, const model::DecodeInputs& in);
StepFn final_pass_step(const model::Model& model, const model::DecodeInputs& in,
                       const model::Memory* draft_encoding);

struct Response {
  data::TokenIds first_pass;  // equals `final` for single-pass variants
  data::TokenIds final;
};

/// Beam-decodes pass 1, re-encodes its top hypothesis and beam-decodes
/// pass 2. Returned sequences exclude BOS and EOS.
Response respond(const model::Model& model, const model::DecodeInputs& in, const DecodeConfig& config);
Response respond(const model::Model& model, const data::TrainingExample& example,
                 const DecodeConfig& config);

struct PerplexityReport {
  double pass1 = 0.0;
  double pass2 = 0.0;  // equals pass1 for single-pass variants
  double nll1 = 0.0;
  double nll2 = 0.0;
  std::size_t tokens = 0;

  double final_ppl() const { return pass2; }
};

/// exp(total NLL / total gold tokens) per pass, PAD excluded. Examples are
/// evaluated in parallel and summed in order. Throws DataError when empty.
PerplexityReport perplexity(const model::Model& model, std::span<const data::TrainingExample> examples);

struct BleuReport {
  double score = 0.0;  // 0..100
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

/// Corpus BLEU-4 with multi-bleu.perl semantics: clipped n-gram counts
/// pooled over the corpus, no smoothing, case-sensitive.
BleuReport bleu(std::span<const data::Tokens> hypotheses, std::span<const data::Tokens> references);

/// Word diff "a [-b-] {+c+} d" turning `before` into `after`.
std::string token_diff(const data::Tokens& before, const data::Tokens& after);

struct EvalReport {
  model::Variant variant = model::Variant::kIteDd;
  PerplexityReport ppl;
  BleuReport bleu;
  std::vector<std::string> first_pass;
  std::vector<std::string> decoded;
  std::vector<std::string> references;
};

EvalReport evaluate(const model::Model& model, const data::Vocab& vocab,
                    std::span<const data::TrainingExample> examples, const DecodeConfig& config,
                    bool decode = true);

struct VariantRow {
  model::Variant variant = model::Variant::kIteDd;
  double ppl_pass1 = 0.0;
  double ppl_final = 0.0;
  double bleu = 0.0;
};

/// One table row per variant, columns PPL(pass1), PPL(final), BLEU.
void print_comparison(std::ostream& out, std::span<const VariantRow> rows);

}  // namespace delib::eval
