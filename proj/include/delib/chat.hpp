#pragma once

#include <deque>
#include <iosfwd>
#include <string>
#include <vector>

#include "delib/data.hpp"
#include "delib/eval.hpp"
#include "delib/model.hpp"

namespace delib::chat {

struct Reply {
  std::string first_pass;
  std::string final;
  std::string diff;  // first_pass -> final
};

/// Keeps the last W utterances with their documents and rebuilds the
/// context state from them before every reply.
class ChatSession {
 public:
  ChatSession(const model::Model& model, const data::Vocab& vocab, eval::DecodeConfig decode = {});

  void set_document(const std::string& text);
  /// Forgets the history; the next reply starts from the empty context.
  void reset();
  /// Appends an utterance to the history without producing a reply.
  void add_utterance(const std::string& speaker, const std::string& text);
  /// Adds the user utterance, decodes a reply and adds it as well.
  Reply reply(const std::string& user_text);

  /// State c^(k) over the current window; empty when there is no history
  /// (or for KAT, which has no incremental state).
  model::ContextState state() const;
  std::size_t history_size() const { return window_.size(); }

  /// Every turn since construction (across resets) as a corpus record.
  const data::Conversation& transcript() const { return transcript_; }

 private:
  struct Entry {
    data::TokenIds utterance;
    data::TokenIds doc;
  };
  data::TrainingExample as_example() const;
  void push(const std::string& speaker, const std::string& text);

  const model::Model& model_;
  const data::Vocab& vocab_;
  eval::DecodeConfig decode_;
  std::deque<Entry> window_;
  data::TokenIds doc_tokens_;
  std::string doc_id_;
  std::size_t doc_count_ = 0;
  data::Conversation transcript_;
};

/// Line-oriented loop: ":doc PATH" swaps the document, ":reset" clears the
/// history, ":quit" ends. Every reply prints both passes.
void run_repl(ChatSession& session, std::istream& in, std::ostream& out);

}  // namespace delib::chat
