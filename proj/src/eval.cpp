#include "delib/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "delib/ops.hpp"
#include "delib/train.hpp"

namespace delib::eval {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Candidate {
  double score;
  int token;
  std::size_t parent;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.token != b.token) return a.token < b.token;
  return a.parent < b.parent;
}

// Last-row log-probabilities; PAD and BOS are never generated.
std::vector<double> last_row_log_probs(const Tensor& logits) {
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  Tensor last = slice(logits, 0, rows - 1, rows);
  Tensor lp = log_softmax(last);
  std::vector<double> out(lp.data().begin(), lp.data().end());
  out.resize(cols);
  out[data::kPad] = kNegInf;
  out[data::kBos] = kNegInf;
  return out;
}

data::TokenIds strip_eos(data::TokenIds tokens) {
  if (!tokens.empty() && tokens.back() == data::kEos) tokens.pop_back();
  return tokens;
}

}  // namespace

Hypothesis beam_search(const StepFn& step, std::size_t beam, std::size_t max_len, int bos, int eos) {
  if (beam == 0) throw ConfigError("beam size must be positive");
  if (max_len == 0) throw ConfigError("max decode length must be positive");

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> pool;
  auto pool_best = [&]() -> const Hypothesis* {
    const Hypothesis* best = nullptr;
    for (const auto& h : pool)
      if (!best || h.score > best->score) best = &h;
    return best;
  };

  for (std::size_t len = 0; len < max_len && !live.empty(); ++len) {
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < live.size(); ++i) {
      data::TokenIds prefix{bos};
      prefix.insert(prefix.end(), live[i].tokens.begin(), live[i].tokens.end());
      const std::vector<double> lp = step(prefix);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (lp[t] == kNegInf) continue;
        candidates.push_back({live[i].score + lp[t], static_cast<int>(t), i});
      }
    }
    const std::size_t keep = std::min(beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);

    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      Hypothesis h = live[candidates[c].parent];
      h.tokens.push_back(candidates[c].token);
      h.score = candidates[c].score;
      if (eos >= 0 && candidates[c].token == eos) {
        h.finished = true;
        pool.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);

    // Scores only fall as tokens append, so no live hypothesis can overtake
    // a finished one that already scores at least as high.
    if (const Hypothesis* best = pool_best(); best && !live.empty() && best->score >= live.front().score)
      live.clear();
  }

  if (const Hypothesis* best = pool_best()) return *best;
  if (live.empty()) return Hypothesis{};
  return live.front();
}

StepFn first_pass_step(const model::Model& model, const model::DecodeInputs& in) {
  return [&model, &in](std::span<const int> prefix) {
    NoGradGuard guard;
    return last_row_log_probs(model.decode_first_pass(prefix, in));
  };
}

StepFn final_pass_step(const model::Model& model, const model::DecodeInputs& in,
                       const model::Memory* draft_encoding) {
  return [&model, &in, draft_encoding](std::span<const int> prefix) {
    NoGradGuard guard;
    return last_row_log_probs(model.decode_final_pass(prefix, in, draft_encoding));
  };
}

Response respond(const model::Model& model, const model::DecodeInputs& in, const DecodeConfig& config) {
  NoGradGuard guard;
  Response r;
  if (model.config().variant == model::Variant::kIteDd) {
    const Hypothesis first =
        beam_search(first_pass_step(model, in), config.beam_size, config.max_len, data::kBos, data::kEos);
    // An empty draft cannot be encoded; a bare EOS stands for "no words".
    data::TokenIds draft = first.tokens.empty() ? data::TokenIds{data::kEos} : first.tokens;
    const model::Memory draft_encoding = model.encode_draft(draft);
    const Hypothesis second = beam_search(final_pass_step(model, in, &draft_encoding), config.beam_size,
                                          config.max_len, data::kBos, data::kEos);
    r.first_pass = strip_eos(first.tokens);
    r.final = strip_eos(second.tokens);
  } else {
    const Hypothesis only = beam_search(final_pass_step(model, in, nullptr), config.beam_size,
                                        config.max_len, data::kBos, data::kEos);
    r.final = strip_eos(only.tokens);
    r.first_pass = r.final;
  }
  return r;
}

Response respond(const model::Model& model, const data::TrainingExample& example,
                 const DecodeConfig& config) {
  NoGradGuard guard;
  return respond(model, model.prepare(example), config);
}

PerplexityReport perplexity(const model::Model& model, std::span<const data::TrainingExample> examples) {
  if (examples.empty()) throw DataError("perplexity: empty dataset");
  const std::size_t n = examples.size();
  std::vector<double> nll1(n), nll2(n);
  std::vector<std::size_t> tokens(n);
  std::vector<std::string> errors(n);

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    NoGradGuard guard;
    try {
      const train::LossTerms t = train::example_loss(model, examples[i]);
      nll1[i] = t.l_mle1;
      nll2[i] = t.l_mle2;
      tokens[i] = t.tokens;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!errors[i].empty()) throw DataError("perplexity: example " + std::to_string(i) + ": " + errors[i]);

  PerplexityReport r;
  for (std::size_t i = 0; i < n; ++i) {
    r.nll1 += nll1[i];
    r.nll2 += nll2[i];
    r.tokens += tokens[i];
  }
  if (r.tokens == 0) throw DataError("perplexity: dataset has no gold tokens");
  const double count = static_cast<double>(r.tokens);
  r.pass1 = std::exp(r.nll1 / count);
  if (model.config().variant == model::Variant::kIteDd) {
    r.pass2 = std::exp(r.nll2 / count);
  } else {
    r.nll2 = r.nll1;
    r.pass2 = r.pass1;
  }
  return r;
}

BleuReport bleu(std::span<const data::Tokens> hypotheses, std::span<const data::Tokens> references) {
  if (hypotheses.size() != references.size()) {
    throw DataError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                    std::to_string(references.size()) + " references");
  }
  std::size_t correct[4] = {0, 0, 0, 0};
  std::size_t total[4] = {0, 0, 0, 0};
  BleuReport r;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    r.hyp_length += hyp.size();
    r.ref_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i)
        ++ref_counts[std::vector<std::string>(ref.begin() + i, ref.begin() + i + n)];
      std::map<std::vector<std::string>, std::size_t> hyp_counts;
      for (std::size_t i = 0; i + n <= hyp.size(); ++i)
        ++hyp_counts[std::vector<std::string>(hyp.begin() + i, hyp.begin() + i + n)];
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) correct[n - 1] += std::min(count, it->second);
        total[n - 1] += count;
      }
    }
  }
  double log_sum = 0.0;
  bool any_zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = total[n] ? static_cast<double>(correct[n]) / static_cast<double>(total[n]) : 0.0;
    if (r.precisions[n] == 0.0) any_zero = true;
    else log_sum += std::log(r.precisions[n]);
  }
  if (r.hyp_length == 0 || r.ref_length == 0) return r;
  r.brevity_penalty = r.hyp_length < r.ref_length
                          ? std::exp(1.0 - static_cast<double>(r.ref_length) / static_cast<double>(r.hyp_length))
                          : 1.0;
  r.score = any_zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

std::string token_diff(const data::Tokens& a, const data::Tokens& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::vector<std::size_t>> lcs(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      lcs[i][j] = a[i] == b[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);

  std::vector<std::string> parts;
  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    if (i < n && j < m && a[i] == b[j]) {
      parts.push_back(a[i]);
      ++i, ++j;
    } else if (j < m && (i == n || lcs[i][j + 1] >= lcs[i + 1][j])) {
      parts.push_back("{+" + b[j++] + "+}");
    } else {
      parts.push_back("[-" + a[i++] + "-]");
    }
  }
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : " ") + p;
  return out;
}

namespace {

std::string join(const data::Tokens& tokens) {
  std::string s;
  for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
  return s;
}

data::Tokens reference_tokens(const data::Vocab& vocab, const data::TrainingExample& example) {
  return vocab.decode(example.target);
}

}  // namespace

EvalReport evaluate(const model::Model& model, const data::Vocab& vocab,
                    std::span<const data::TrainingExample> examples, const DecodeConfig& config,
                    bool decode) {
  EvalReport report;
  report.variant = model.config().variant;
  report.ppl = perplexity(model, examples);
  if (!decode) return report;

  const std::size_t n = examples.size();
  std::vector<Response> responses(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      responses[i] = respond(model, examples[i], config);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!errors[i].empty()) throw DataError("decode: example " + std::to_string(i) + ": " + errors[i]);

  std::vector<data::Tokens> hyps, refs;
  for (std::size_t i = 0; i < n; ++i) {
    hyps.push_back(vocab.decode(responses[i].final));
    refs.push_back(reference_tokens(vocab, examples[i]));
    report.first_pass.push_back(join(vocab.decode(responses[i].first_pass)));
    report.decoded.push_back(join(hyps.back()));
    report.references.push_back(join(refs.back()));
  }
  report.bleu = bleu(hyps, refs);
  return report;
}

void print_comparison(std::ostream& out, std::span<const VariantRow> rows) {
  out << std::left << std::setw(10) << "variant" << std::right << std::setw(14) << "PPL(pass1)"
      << std::setw(14) << "PPL(final)" << std::setw(10) << "BLEU" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << model::to_string(r.variant) << std::right << std::fixed
        << std::setprecision(4) << std::setw(14) << r.ppl_pass1 << std::setw(14) << r.ppl_final
        << std::setprecision(2) << std::setw(10) << r.bleu << '\n';
    out.unsetf(std::ios::fixed);
  }
}

}  // namespace delib::eval
