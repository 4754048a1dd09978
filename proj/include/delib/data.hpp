#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "delib/tensor.hpp"

namespace delib::data {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr std::size_t kNumSpecials = 4;

using Tokens = std::vector<std::string>;
using TokenIds = std::vector<int>;

struct SchemaError : DataError {
  using DataError::DataError;
};

struct Turn {
  std::string speaker;  // "A" or "B"
  std::string text;
  std::string doc;  // key into Conversation::docs; empty means no document

  bool operator==(const Turn&) const = default;
};

struct Conversation {
  std::vector<Turn> turns;
  std::map<std::string, std::string> docs;

  bool operator==(const Conversation&) const = default;
};

/// Joins adjacent turns of the same speaker with a single space. The merged
/// turn keeps the document of its first constituent.
Conversation merge_consecutive(const Conversation& conversation);

/// Lowercases, splits on whitespace and splits each of . , ! ? ' " : ;
/// into its own token.
Tokens tokenize(std::string_view text);

class Vocab {
 public:
  /// Keeps tokens seen at least `min_count` times, ranked by count
  /// descending then token ascending, at most `max_size` of them, after the
  /// four reserved specials.
  static Vocab build(std::span<const Tokens> corpus, std::size_t min_count, std::size_t max_size);
  /// Rebuilds from an id-ordered token list whose first entries are the specials.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  int id(std::string_view token) const;  // UNK when absent
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t frequency(std::string_view token) const;

  TokenIds encode(const Tokens& tokens) const;
  // Drops PAD/BOS/EOS and stops at the first EOS when strip_specials is set.
  Tokens decode(std::span<const int> ids, bool strip_specials = true) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> index_;
  std::map<std::string, std::size_t, std::less<>> counts_;
};

const std::vector<std::string>& special_tokens();

struct SequenceCaps {
  std::size_t utterance = 50;
  std::size_t document = 256;
};

/// Windowed example in token form, before id encoding.
struct TextExample {
  std::vector<Tokens> context;       // up to W utterances, oldest first
  std::vector<Tokens> context_docs;  // one per context utterance
  Tokens target;                     // response tokens, no BOS/EOS
  Tokens target_doc;
};

struct TrainingExample {
  std::vector<TokenIds> context;
  std::vector<TokenIds> context_docs;
  TokenIds target;  // BOS ... EOS
  TokenIds target_doc;

  bool operator==(const TrainingExample&) const = default;
};

/// One example per turn k >= 1 (1-based): context = turns max(1, k-W+1)..k,
/// target = turn k+1. Expects a merged conversation; fewer than two turns
/// yields no examples. Token lists are truncated to `caps` (documents keep
/// their leading tokens).
std::vector<TextExample> make_text_examples(const Conversation& conversation, std::size_t window,
                                            const SequenceCaps& caps = {});

/// Ids with BOS/EOS around the target. Empty documents and utterances
/// become a single UNK token.
TrainingExample encode_example(const TextExample& example, const Vocab& vocab);

std::vector<TrainingExample> make_examples(const Conversation& conversation, std::size_t window,
                                           const Vocab& vocab, const SequenceCaps& caps = {});

/// Every token of every utterance and document, for vocabulary building.
std::vector<Tokens> corpus_token_lists(std::span<const Conversation> corpus);

// --- JSONL corpus -----------------------------------------------------------
//
// One conversation per line:
//   {"turns": [{"speaker": "A"|"B", "text": str, "doc": str-id}], "docs": {str-id: str}}

struct CorpusStats {
  std::size_t conversations = 0;
  std::size_t turns = 0;
  std::size_t documents = 0;
};

std::vector<Conversation> parse_corpus(std::istream& in, CorpusStats* stats = nullptr);
std::vector<Conversation> load_corpus(const std::string& path, CorpusStats* stats = nullptr);

std::string to_json_line(const Conversation& conversation);
void write_corpus(std::ostream& out, std::span<const Conversation> corpus);
void save_corpus(const std::string& path, std::span<const Conversation> corpus);

// --- synthetic fact-copy task ------------------------------------------------

struct FactCopySpec {
  std::size_t n_keys = 0;
  std::size_t n_values = 0;
};

/// Splits a content-vocabulary budget into disjoint key and value pools
/// next to the three question words. Throws ConfigError when either pool
/// would be too small.
FactCopySpec fact_copy_spec(std::size_t n_facts, std::size_t vocab_size);
std::string fact_copy_key(std::size_t i);
std::string fact_copy_value(std::size_t i);

/// Each conversation has one document "key_1 value_1 ... key_n value_n"
/// with values drawn uniformly per conversation. Speaker A asks
/// "what is key_i ?" and B answers "value_i", `questions` times.
std::vector<Conversation> gen_fact_copy_task(std::uint64_t seed, std::size_t n_conversations,
                                             std::size_t n_facts, std::size_t vocab_size,
                                             std::size_t questions = 1);

}  // namespace delib::data
