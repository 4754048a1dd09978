#include "delib/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace delib::data {

namespace {

constexpr std::string_view kSplitPunctuation = ".,!?'\":;";

Tokens capped(Tokens tokens, std::size_t cap) {
  if (tokens.size() > cap) tokens.resize(cap);
  return tokens;
}

TokenIds ids_or_unk(const Vocab& vocab, const Tokens& tokens) {
  if (tokens.empty()) return {kUnk};
  return vocab.encode(tokens);
}

const std::string& require_string(const nlohmann::json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) {
    throw SchemaError("line " + std::to_string(line) + ": missing field \"" + field + "\"");
  }
  if (!it->is_string()) {
    throw SchemaError("line " + std::to_string(line) + ": field \"" + field + "\" must be a string");
  }
  return it->get_ref<const std::string&>();
}

}  // namespace

Conversation merge_consecutive(const Conversation& conversation) {
  Conversation out;
  out.docs = conversation.docs;
  for (const auto& turn : conversation.turns) {
    if (!out.turns.empty() && out.turns.back().speaker == turn.speaker) {
      out.turns.back().text += ' ';
      out.turns.back().text += turn.text;
    } else {
      out.turns.push_back(turn);
    }
  }
  return out;
}

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc)) {
      flush();
    } else if (kSplitPunctuation.find(ch) != std::string_view::npos) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(uc < 128 ? static_cast<char>(std::tolower(uc)) : ch);
    }
  }
  flush();
  return out;
}

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{"<pad>", "<unk>", "<bos>", "<eos>"};
  return specials;
}

Vocab Vocab::build(std::span<const Tokens> corpus, std::size_t min_count, std::size_t max_size) {
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, std::size_t> counts;
  const auto& specials = special_tokens();
  for (const auto& seq : corpus)
    for (const auto& tok : seq)
      if (std::find(specials.begin(), specials.end(), tok) == specials.end()) ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts)
    if (n >= min_count) ranked.emplace_back(tok, n);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > max_size) ranked.resize(max_size);

  std::vector<std::string> tokens = specials;
  for (auto& [tok, _] : ranked) tokens.push_back(tok);
  Vocab v = from_tokens(std::move(tokens));
  for (auto& [tok, n] : counts) v.counts_.emplace(tok, n);
  return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens.begin())) {
    throw DataError("vocabulary must start with the reserved special tokens");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token: " + v.tokens_[i]);
    }
  }
  return v;
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " out of vocabulary range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::size_t Vocab::frequency(std::string_view token) const {
  auto it = counts_.find(token);
  return it == counts_.end() ? 0 : it->second;
}

TokenIds Vocab::encode(const Tokens& tokens) const {
  TokenIds ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Tokens Vocab::decode(std::span<const int> ids, bool strip_specials) const {
  Tokens out;
  for (int id : ids) {
    if (strip_specials) {
      if (id == kEos) break;
      if (id == kPad || id == kBos) continue;
    }
    out.push_back(token(id));
  }
  return out;
}

std::vector<TextExample> make_text_examples(const Conversation& conversation, std::size_t window,
                                            const SequenceCaps& caps) {
  if (window == 0) throw ConfigError("context window must be positive");
  std::vector<TextExample> out;
  const auto& turns = conversation.turns;
  if (turns.size() < 2) return out;

  auto doc_tokens = [&](const Turn& t) -> Tokens {
    if (t.doc.empty()) return {};
    auto it = conversation.docs.find(t.doc);
    if (it == conversation.docs.end()) throw DataError("unresolvable document id: " + t.doc);
    return capped(tokenize(it->second), caps.document);
  };

  std::vector<Tokens> utts, docs;
  for (const auto& t : turns) {
    utts.push_back(capped(tokenize(t.text), caps.utterance));
    docs.push_back(doc_tokens(t));
  }
  // 0-based: example for turn k (k = 0..K-2) predicts turn k+1.
  for (std::size_t k = 0; k + 1 < turns.size(); ++k) {
    TextExample ex;
    const std::size_t first = k + 1 >= window ? k + 1 - window : 0;
    for (std::size_t j = first; j <= k; ++j) {
      ex.context.push_back(utts[j]);
      ex.context_docs.push_back(docs[j]);
    }
    ex.target = utts[k + 1];
    ex.target_doc = docs[k + 1];
    out.push_back(std::move(ex));
  }
  return out;
}

TrainingExample encode_example(const TextExample& example, const Vocab& vocab) {
  TrainingExample ex;
  for (const auto& u : example.context) ex.context.push_back(ids_or_unk(vocab, u));
  for (const auto& d : example.context_docs) ex.context_docs.push_back(ids_or_unk(vocab, d));
  ex.target.push_back(kBos);
  for (int id : vocab.encode(example.target)) ex.target.push_back(id);
  ex.target.push_back(kEos);
  ex.target_doc = ids_or_unk(vocab, example.target_doc);
  return ex;
}

std::vector<TrainingExample> make_examples(const Conversation& conversation, std::size_t window,
                                           const Vocab& vocab, const SequenceCaps& caps) {
  std::vector<TrainingExample> out;
  for (const auto& t : make_text_examples(conversation, window, caps))
    out.push_back(encode_example(t, vocab));
  return out;
}

std::vector<Tokens> corpus_token_lists(std::span<const Conversation> corpus) {
  std::vector<Tokens> out;
  for (const auto& c : corpus) {
    for (const auto& t : c.turns) out.push_back(tokenize(t.text));
    for (const auto& [_, text] : c.docs) out.push_back(tokenize(text));
  }
  return out;
}

std::vector<Conversation> parse_corpus(std::istream& in, CorpusStats* stats) {
  std::vector<Conversation> out;
  CorpusStats local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }))
      continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw SchemaError("line " + std::to_string(line_no) + ": record must be an object");
    Conversation conv;
    auto docs = j.find("docs");
    if (docs == j.end() || !docs->is_object()) {
      throw SchemaError("line " + std::to_string(line_no) + ": missing object field \"docs\"");
    }
    for (auto it = docs->begin(); it != docs->end(); ++it) {
      if (!it->is_string()) {
        throw SchemaError("line " + std::to_string(line_no) + ": document \"" + it.key() + "\" must be a string");
      }
      conv.docs.emplace(it.key(), it->get<std::string>());
    }
    auto turns = j.find("turns");
    if (turns == j.end() || !turns->is_array()) {
      throw SchemaError("line " + std::to_string(line_no) + ": missing array field \"turns\"");
    }
    for (const auto& t : *turns) {
      if (!t.is_object()) throw SchemaError("line " + std::to_string(line_no) + ": turn must be an object");
      Turn turn{require_string(t, "speaker", line_no), require_string(t, "text", line_no),
                require_string(t, "doc", line_no)};
      if (turn.speaker != "A" && turn.speaker != "B") {
        throw SchemaError("line " + std::to_string(line_no) + ": speaker must be \"A\" or \"B\", got \"" +
                          turn.speaker + "\"");
      }
      if (!turn.doc.empty() && conv.docs.count(turn.doc) == 0) {
        throw SchemaError("line " + std::to_string(line_no) + ": unresolvable document id \"" + turn.doc + "\"");
      }
      conv.turns.push_back(std::move(turn));
    }
    local.turns += conv.turns.size();
    local.documents += conv.docs.size();
    out.push_back(std::move(conv));
  }
  local.conversations = out.size();
  if (stats) *stats = local;
  return out;
}

std::vector<Conversation> load_corpus(const std::string& path, CorpusStats* stats) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus: " + path);
  auto corpus = parse_corpus(in, stats);
  if (corpus.empty()) std::cerr << "warning: corpus " << path << " contains no conversations\n";
  return corpus;
}

std::string to_json_line(const Conversation& conversation) {
  nlohmann::ordered_json j;
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& t : conversation.turns) {
    nlohmann::ordered_json turn;
    turn["speaker"] = t.speaker;
    turn["text"] = t.text;
    turn["doc"] = t.doc;
    j["turns"].push_back(std::move(turn));
  }
  j["docs"] = nlohmann::ordered_json::object();
  for (const auto& [id, text] : conversation.docs) j["docs"][id] = text;
  return j.dump();
}

void write_corpus(std::ostream& out, std::span<const Conversation> corpus) {
  for (const auto& c : corpus) out << to_json_line(c) << '\n';
}

void save_corpus(const std::string& path, std::span<const Conversation> corpus) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus: " + path);
  write_corpus(out, corpus);
}

FactCopySpec fact_copy_spec(std::size_t n_facts, std::size_t vocab_size) {
  if (n_facts < 2) throw ConfigError("fact-copy task needs at least 2 facts per document");
  const std::size_t question_words = 3;  // what, is, ?
  if (vocab_size < question_words) throw ConfigError("fact-copy vocabulary too small");
  const std::size_t pool = (vocab_size - question_words) / 2;
  if (pool < n_facts) {
    throw ConfigError("fact-copy vocabulary of " + std::to_string(vocab_size) +
                      " cannot hold disjoint key/value pools for " + std::to_string(n_facts) + " facts");
  }
  return {pool, pool};
}

std::string fact_copy_key(std::size_t i) { return "key" + std::to_string(i); }
std::string fact_copy_value(std::size_t i) { return "val" + std::to_string(i); }

std::vector<Conversation> gen_fact_copy_task(std::uint64_t seed, std::size_t n_conversations,
                                             std::size_t n_facts, std::size_t vocab_size,
                                             std::size_t questions) {
  const FactCopySpec spec = fact_copy_spec(n_facts, vocab_size);
  if (questions == 0) throw ConfigError("fact-copy task needs at least one question per conversation");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keys(spec.n_keys);
  std::vector<Conversation> out;
  out.reserve(n_conversations);
  for (std::size_t c = 0; c < n_conversations; ++c) {
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = i;
    // Partial Fisher-Yates: the first n_facts entries are a uniform sample.
    for (std::size_t i = 0; i < n_facts; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, keys.size() - 1);
      std::swap(keys[i], keys[pick(rng)]);
    }
    std::vector<std::size_t> values(n_facts);
    std::uniform_int_distribution<std::size_t> value_dist(0, spec.n_values - 1);
    for (auto& v : values) v = value_dist(rng);

    std::ostringstream doc;
    for (std::size_t i = 0; i < n_facts; ++i) {
      if (i) doc << ' ';
      doc << fact_copy_key(keys[i]) << ' ' << fact_copy_value(values[i]);
    }
    Conversation conv;
    conv.docs.emplace("doc", doc.str());
    std::uniform_int_distribution<std::size_t> fact_dist(0, n_facts - 1);
    for (std::size_t q = 0; q < questions; ++q) {
      const std::size_t f = fact_dist(rng);
      conv.turns.push_back({"A", "what is " + fact_copy_key(keys[f]) + " ?", "doc"});
      conv.turns.push_back({"B", fact_copy_value(values[f]), "doc"});
    }
    out.push_back(std::move(conv));
  }
  return out;
}

}  // namespace delib::data
