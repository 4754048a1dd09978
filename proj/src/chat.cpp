#include "delib/chat.hpp"

#include <fstream>
#include <iostream>
#include <iterator>

namespace delib::chat {

namespace {

std::string join(const data::Tokens& tokens) {
  std::string s;
  for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
  return s;
}

data::TokenIds encode_or_unk(const data::Vocab& vocab, const data::Tokens& tokens, std::size_t cap) {
  data::Tokens capped(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(std::min(cap, tokens.size())));
  data::TokenIds ids = vocab.encode(capped);
  if (ids.empty()) ids.push_back(data::kUnk);
  return ids;
}

}  // namespace

ChatSession::ChatSession(const model::Model& model, const data::Vocab& vocab, eval::DecodeConfig decode)
    : model_(model), vocab_(vocab), decode_(decode) {
  set_document("");
}

void ChatSession::set_document(const std::string& text) {
  doc_tokens_ = encode_or_unk(vocab_, data::tokenize(text), model_.config().max_doc_len);
  doc_id_ = "doc" + std::to_string(doc_count_++);
  transcript_.docs[doc_id_] = text;
}

void ChatSession::reset() { window_.clear(); }

void ChatSession::push(const std::string& speaker, const std::string& text) {
  window_.push_back({encode_or_unk(vocab_, data::tokenize(text), data::SequenceCaps{}.utterance), doc_tokens_});
  while (window_.size() > model_.config().window) window_.pop_front();
  transcript_.turns.push_back({speaker, text, doc_id_});
}

void ChatSession::add_utterance(const std::string& speaker, const std::string& text) { push(speaker, text); }

data::TrainingExample ChatSession::as_example() const {
  data::TrainingExample ex;
  for (const auto& e : window_) {
    ex.context.push_back(e.utterance);
    ex.context_docs.push_back(e.doc);
  }
  ex.target_doc = doc_tokens_;
  return ex;
}

model::ContextState ChatSession::state() const {
  if (window_.empty() || model_.config().variant == model::Variant::kKat) return {};
  NoGradGuard guard;
  const auto ex = as_example();
  return model_.encode_dialogue(ex.context, ex.context_docs);
}

Reply ChatSession::reply(const std::string& user_text) {
  push("A", user_text);
  const eval::Response r = eval::respond(model_, as_example(), decode_);
  Reply out;
  const data::Tokens first = vocab_.decode(r.first_pass);
  const data::Tokens final = vocab_.decode(r.final);
  out.first_pass = join(first);
  out.final = join(final);
  out.diff = eval::token_diff(first, final);
  push("B", out.final);
  return out;
}

void run_repl(ChatSession& session, std::istream& in, std::ostream& out) {
  std::string line;
  out << "> " << std::flush;
  while (std::getline(in, line)) {
    if (line == ":quit") break;
    if (line == ":reset") {
      session.reset();
      out << "(context cleared)\n";
    } else if (line.rfind(":doc", 0) == 0) {
      const std::string path = line.size() > 5 ? line.substr(5) : "";
      std::ifstream f(path);
      if (!f) {
        out << "cannot open document " << path << '\n';
      } else {
        session.set_document(std::string(std::istreambuf_iterator<char>(f), {}));
        out << "(document loaded)\n";
      }
    } else if (!line.empty()) {
      const Reply r = session.reply(line);
      out << "pass 1: " << r.first_pass << '\n' << "final:  " << r.final << '\n';
      if (r.first_pass != r.final) out << "diff:   " << r.diff << '\n';
    }
    out << "> " << std::flush;
  }
}

}  // namespace delib::chat
