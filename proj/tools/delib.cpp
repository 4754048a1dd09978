// Command-line front end: train / eval / decode / chat / gradcheck /
// gen-synth / compare.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "delib/chat.hpp"
#include "delib/checkpoint.hpp"
#include "delib/compare.hpp"
#include "delib/config.hpp"
#include "delib/data.hpp"
#include "delib/eval.hpp"
#include "delib/suites.hpp"
#include "delib/train.hpp"

namespace fs = std::filesystem;
using namespace delib;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// A training output directory holds best/ and last/; accept either it or a
// checkpoint directory directly.
fs::path resolve_checkpoint(const fs::path& p) {
  if (fs::exists(p / checkpoint::kManifestName)) return p;
  if (fs::exists(p / "best" / checkpoint::kManifestName)) return p / "best";
  throw checkpoint::CheckpointError("no checkpoint manifest under " + p.string());
}

std::vector<data::TrainingExample> corpus_examples(const std::string& path, const checkpoint::Loaded& ckpt) {
  const auto corpus = data::load_corpus(path);
  const data::SequenceCaps caps{ckpt.train_config.utterance_cap, ckpt.model->config().max_doc_len};
  std::vector<data::TrainingExample> out;
  for (const auto& c : corpus) {
    auto ex = data::make_examples(data::merge_consecutive(c), ckpt.model->config().window, ckpt.vocab, caps);
    out.insert(out.end(), ex.begin(), ex.end());
  }
  if (out.empty()) throw DataError("corpus " + path + " yields no examples");
  return out;
}

std::string join(const data::Tokens& t) {
  std::string s;
  for (const auto& w : t) s += (s.empty() ? "" : " ") + w;
  return s;
}

int cmd_train(const std::string& config_path, const std::string& corpus_path, const std::string& out_dir) {
  config::RunConfig rc = config::load(config_path);
  rc.train.checkpoint_dir = out_dir;
  data::CorpusStats stats;
  const auto corpus = data::load_corpus(corpus_path, &stats);
  std::cerr << "corpus: " << stats.conversations << " conversations, " << stats.turns << " turns, "
            << stats.documents << " documents\n";
  const train::Dataset ds = train::prepare_dataset(corpus, rc.model.window, rc.model.max_doc_len, rc.train);
  rc.model.vocab_size = ds.vocab.size();
  std::cerr << "vocab " << ds.vocab.size() << ", train examples " << ds.train.size() << ", validation examples "
            << ds.val.size() << '\n';

  fs::create_directories(out_dir);
  std::ofstream metrics(fs::path(out_dir) / "metrics.csv");
  std::ofstream(fs::path(out_dir) / "config.txt") << config::to_text(rc);
  model::Model model(rc.model, rc.train.seed);
  std::cerr << model::to_string(rc.model.variant) << ": " << model.parameter_count() << " parameters\n";
  train::Adam adam({rc.train.learning_rate, rc.train.beta1, rc.train.beta2, rc.train.epsilon});
  train::TrainHooks hooks;
  hooks.metrics = &metrics;
  hooks.on_row = [](const train::MetricsRow& r) {
    std::cerr << "step " << r.step << "  L_mle/token " << std::setprecision(5) << r.l_mle << "  val PPL "
              << r.val_ppl_pass1 << " / " << r.val_ppl_pass2 << "  " << static_cast<long>(r.wall_ms) << " ms\n";
  };
  const auto result = train::train(model, ds, rc.train, adam, hooks);
  std::cout << "trained " << result.steps << " steps; best step " << result.best_step;
  if (!ds.val.empty()) std::cout << ", validation PPL " << result.best_val_ppl;
  std::cout << "\ncheckpoint: " << (fs::path(out_dir) / "best").string() << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& corpus_path, const std::string& variant,
             bool decode) {
  const auto ckpt = checkpoint::load(resolve_checkpoint(ckpt_path));
  if (!variant.empty() && model::parse_variant(variant) != ckpt.model->config().variant) {
    throw DataError("checkpoint holds a " + model::to_string(ckpt.model->config().variant) + " model, not " +
                    variant);
  }
  const auto examples = corpus_examples(corpus_path, ckpt);
  const auto report = eval::evaluate(*ckpt.model, ckpt.vocab, examples, eval::DecodeConfig{}, decode);
  std::cout << "variant      " << model::to_string(report.variant) << '\n'
            << "examples     " << examples.size() << '\n'
            << std::setprecision(6) << "PPL(pass1)   " << report.ppl.pass1 << '\n'
            << "PPL(final)   " << report.ppl.final_ppl() << '\n';
  if (decode) std::cout << "BLEU         " << std::fixed << std::setprecision(2) << report.bleu.score << '\n';
  return kExitOk;
}

int cmd_decode(const std::string& ckpt_path, const std::string& corpus_path, const std::string& out_path,
               std::size_t beam, std::size_t max_len) {
  const auto ckpt = checkpoint::load(resolve_checkpoint(ckpt_path));
  const auto examples = corpus_examples(corpus_path, ckpt);
  const auto report = eval::evaluate(*ckpt.model, ckpt.vocab, examples, {beam, max_len}, true);
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot write " + out_path);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    nlohmann::ordered_json j;
    j["context"] = nlohmann::json::array();
    for (const auto& u : examples[i].context) j["context"].push_back(join(ckpt.vocab.decode(u)));
    j["first_pass"] = report.first_pass[i];
    j["final"] = report.decoded[i];
    j["reference"] = report.references[i];
    out << j.dump() << '\n';
  }
  std::cout << "wrote " << examples.size() << " responses to " << out_path << "; BLEU " << std::fixed
            << std::setprecision(2) << report.bleu.score << '\n';
  return kExitOk;
}

int cmd_chat(const std::string& ckpt_path, const std::string& doc_path, const std::string& transcript_path) {
  const auto ckpt = checkpoint::load(resolve_checkpoint(ckpt_path));
  chat::ChatSession session(*ckpt.model, ckpt.vocab);
  if (!doc_path.empty()) {
    std::ifstream f(doc_path);
    if (!f) throw DataError("cannot open document " + doc_path);
    session.set_document(std::string(std::istreambuf_iterator<char>(f), {}));
  }
  chat::run_repl(session, std::cin, std::cout);
  if (!transcript_path.empty()) {
    std::ofstream out(transcript_path, std::ios::app);
    out << data::to_json_line(session.transcript()) << '\n';
  }
  return kExitOk;
}

int cmd_gradcheck(bool full, std::uint64_t seed) {
  bool ok = true;
  auto show = [&](const std::vector<suites::CheckResult>& results) {
    for (const auto& r : results) {
      ok = ok && r.report.passed;
      std::cout << (r.report.passed ? "ok    " : "FAIL  ") << std::left << std::setw(22) << r.name
                << " max rel err " << std::scientific << std::setprecision(2) << r.report.max_rel_error
                << std::defaultfloat << "  (" << r.report.coordinates << " coords)";
      if (!r.report.diagnostic.empty()) std::cout << "  " << r.report.diagnostic;
      std::cout << '\n';
    }
  };
  show(suites::op_gradcheck_suite(seed));
  if (full) show(suites::model_gradcheck_suite(seed));
  std::cout << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return ok ? kExitOk : kExitNumeric;
}

int cmd_gen_synth(std::uint64_t seed, const std::string& out, std::size_t conversations, std::size_t facts,
                  std::size_t vocab, std::size_t questions) {
  const auto corpus = data::gen_fact_copy_task(seed, conversations, facts, vocab, questions);
  data::save_corpus(out, corpus);
  std::cout << "wrote " << corpus.size() << " conversations to " << out << '\n';
  return kExitOk;
}

int cmd_compare(const std::string& config_path, const std::string& corpus_path, std::vector<std::uint64_t> seeds,
                bool bleu) {
  const config::RunConfig rc = config::load(config_path);
  const auto corpus = data::load_corpus(corpus_path);
  const train::Dataset ds = train::prepare_dataset(corpus, rc.model.window, rc.model.max_doc_len, rc.train);
  compare::Options opts;
  opts.seeds = std::move(seeds);
  opts.decode = bleu;
  opts.log = [](const std::string& s) { std::cerr << s << '\n'; };
  const auto result = compare::compare_variants(ds, rc, opts);
  eval::print_comparison(std::cout, result.rows);
  for (const auto& r : result.rows) {
    if (r.variant == model::Variant::kIteDd)
      std::cout << "ITE+DD pass1 - final PPL gap: " << r.ppl_pass1 - r.ppl_final << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental-encoder / deliberation-decoder dialogue models"};
  app.require_subcommand(1);

  std::string config_path, corpus_path, out_path, ckpt_path, variant, doc_path, transcript_path;
  std::uint64_t seed = 1;
  bool full = false, no_bleu = false;
  std::size_t conversations = 500, facts = 4, vocab = 64, questions = 1, beam = 5, max_len = 30;
  std::vector<std::uint64_t> seeds{1};

  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoints");
  train_cmd->add_option("--config", config_path, "run configuration (key = value)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--corpus", corpus_path, "JSONL corpus")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_path, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "perplexity and BLEU on a corpus");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
  eval_cmd->add_option("--corpus", corpus_path, "JSONL corpus")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--variant", variant, "expected variant tag");
  eval_cmd->add_flag("--no-bleu", no_bleu, "skip beam decoding");

  auto* decode_cmd = app.add_subcommand("decode", "beam-decode responses to JSONL");
  decode_cmd->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
  decode_cmd->add_option("--corpus", corpus_path, "JSONL corpus")->required()->check(CLI::ExistingFile);
  decode_cmd->add_option("--out", out_path, "output JSONL")->required();
  decode_cmd->add_option("--beam", beam, "beam size")->check(CLI::PositiveNumber);
  decode_cmd->add_option("--max-len", max_len, "maximum response length")->check(CLI::PositiveNumber);

  auto* chat_cmd = app.add_subcommand("chat", "interactive session");
  chat_cmd->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
  chat_cmd->add_option("--doc", doc_path, "document text file")->check(CLI::ExistingFile);
  chat_cmd->add_option("--transcript", transcript_path, "append the session to this JSONL corpus");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  grad_cmd->add_flag("--full", full, "also check every tiny model variant");
  grad_cmd->add_option("--seed", seed, "random seed");

  auto* synth_cmd = app.add_subcommand("gen-synth", "generate the fact-copy corpus");
  synth_cmd->add_option("--seed", seed, "random seed")->required();
  synth_cmd->add_option("--out", out_path, "output JSONL")->required();
  synth_cmd->add_option("--conversations", conversations, "number of conversations");
  synth_cmd->add_option("--facts", facts, "facts per document");
  synth_cmd->add_option("--vocab", vocab, "content vocabulary budget");
  synth_cmd->add_option("--questions", questions, "questions per conversation");

  auto* compare_cmd = app.add_subcommand("compare", "train and score every variant");
  compare_cmd->add_option("--config", config_path, "run configuration")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--corpus", corpus_path, "JSONL corpus")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--seeds", seeds, "seeds to average over")->delimiter(',');
  compare_cmd->add_flag("--no-bleu", no_bleu, "skip beam decoding");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, corpus_path, out_path);
    if (eval_cmd->parsed()) return cmd_eval(ckpt_path, corpus_path, variant, !no_bleu);
    if (decode_cmd->parsed()) return cmd_decode(ckpt_path, corpus_path, out_path, beam, max_len);
    if (chat_cmd->parsed()) return cmd_chat(ckpt_path, doc_path, transcript_path);
    if (grad_cmd->parsed()) return cmd_gradcheck(full, seed);
    if (synth_cmd->parsed()) return cmd_gen_synth(seed, out_path, conversations, facts, vocab, questions);
    if (compare_cmd->parsed()) return cmd_compare(config_path, corpus_path, seeds, !no_bleu);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
