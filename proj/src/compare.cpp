#include "delib/compare.hpp"

namespace delib::compare {

Result compare_variants(const train::Dataset& dataset, const config::RunConfig& base, const Options& options) {
  if (options.variants.size() < 2) throw ConfigError("compare needs at least two variants");
  if (options.seeds.empty()) throw ConfigError("compare needs at least one seed");
  const auto& eval_set = dataset.val.empty() ? dataset.train : dataset.val;

  Result result;
  result.rows.resize(options.variants.size());
  for (std::size_t v = 0; v < options.variants.size(); ++v) result.rows[v].variant = options.variants[v];

  for (const auto seed : options.seeds) {
    std::vector<eval::VariantRow> rows;
    for (const auto variant : options.variants) {
      model::ModelConfig mc = base.model;
      mc.variant = variant;
      mc.vocab_size = dataset.vocab.size();
      train::TrainConfig tc = base.train;
      tc.seed = seed;
      tc.checkpoint_dir.clear();
      model::Model model(mc, seed);
      train::Adam adam({tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon});
      train::train(model, dataset, tc, adam);
      const eval::EvalReport report = eval::evaluate(model, dataset.vocab, eval_set, base.decode, options.decode);
      rows.push_back({variant, report.ppl.pass1, report.ppl.final_ppl(), report.bleu.score});
      if (options.log) {
        options.log("seed " + std::to_string(seed) + " " + model::to_string(variant) + ": PPL(pass1) " +
                    std::to_string(report.ppl.pass1) + ", PPL(final) " + std::to_string(report.ppl.final_ppl()));
      }
    }
    result.per_seed.push_back(rows);
  }

  const double n = static_cast<double>(options.seeds.size());
  for (const auto& rows : result.per_seed) {
    for (std::size_t v = 0; v < rows.size(); ++v) {
      result.rows[v].ppl_pass1 += rows[v].ppl_pass1 / n;
      result.rows[v].ppl_final += rows[v].ppl_final / n;
      result.rows[v].bleu += rows[v].bleu / n;
    }
  }
  return result;
}

}  // namespace delib::compare
