#include "delib/model.hpp"

#include <algorithm>
#include <limits>

#include "delib/ops.hpp"

namespace delib::model {

namespace {

constexpr std::size_t kMinPositionRows = 512;

// Documents repeat across turns; encode each distinct token list once per
// forward pass.
class DocCache {
 public:
  explicit DocCache(const Model& model) : model_(model) {}
  const EncodedDoc& get(const TokenIds& tokens) {
    for (const auto& [key, doc] : entries_)
      if (key == tokens) return doc;
    entries_.emplace_back(tokens, model_.encode_document(tokens));
    return entries_.back().second;
  }

 private:
  const Model& model_;
  std::vector<std::pair<TokenIds, EncodedDoc>> entries_;
};

void require_nonempty(std::span<const int> tokens, const char* what) {
  if (tokens.empty()) throw ShapeError(std::string(what) + ": empty sequence");
}

void require_prefix(std::span<const int> prefix) {
  if (prefix.empty()) throw ShapeError("decoder: empty target prefix");
  if (prefix[0] != data::kBos) throw ShapeError("decoder: target prefix must start with BOS");
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kIteDd: return "ITE+DD";
    case Variant::kIteCkad: return "ITE+CKAD";
    case Variant::kKat: return "KAT";
  }
  return "?";
}

Variant parse_variant(std::string_view tag) {
  if (tag == "ITE+DD") return Variant::kIteDd;
  if (tag == "ITE+CKAD") return Variant::kIteCkad;
  if (tag == "KAT") return Variant::kKat;
  throw ConfigError("unknown model variant: " + std::string(tag));
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(d_ff, "d_ff");
  positive(sa_layers, "sa_layers");
  positive(ite_layers, "ite_layers");
  positive(dec_layers, "dec_layers");
  positive(vocab_size, "vocab_size");
  positive(window, "window");
  positive(max_doc_len, "max_doc_len");
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (d_model % 2 != 0) throw ConfigError("d_model must be even for positional encoding");
  if (vocab_size <= static_cast<std::size_t>(data::kEos)) {
    throw ConfigError("vocab_size must exceed the reserved special tokens");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      positions_(std::max(config_.max_doc_len, kMinPositionRows), config_.d_model),
      dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  config_.validate();
  nn::Initializer init(seed);
  const std::size_t d = config_.d_model;
  embedding_ = params_.add("embedding", init.matrix(config_.vocab_size, d));

  for (std::size_t i = 0; i < config_.sa_layers; ++i)
    sa_doc_.push_back(make_sa_layer("sa_doc." + std::to_string(i), init));

  switch (config_.variant) {
    case Variant::kIteDd:
      for (std::size_t i = 0; i < config_.sa_layers; ++i)
        sa_utt_.push_back(make_sa_layer("sa_utt." + std::to_string(i), init));
      for (std::size_t i = 0; i < config_.ite_layers; ++i)
        ite_.push_back(make_incremental_layer("ite." + std::to_string(i), true, init));
      first_ = make_decoder("dec1", "context_attn", "utterance_attn", init);
      second_ = make_decoder("dec2", "knowledge_attn", "draft_attn", init);
      break;
    case Variant::kIteCkad:
      for (std::size_t i = 0; i < config_.ite_layers; ++i)
        ite_.push_back(make_incremental_layer("ite." + std::to_string(i), true, init));
      first_ = make_decoder("ckad", "context_attn", "knowledge_attn", init);
      break;
    case Variant::kKat:
      for (std::size_t i = 0; i < config_.ite_layers; ++i)
        ite_.push_back(make_incremental_layer("kat_enc." + std::to_string(i), false, init));
      first_ = make_decoder("kat_dec", "encoder_attn", "knowledge_attn", init);
      break;
  }
}

SelfAttentiveLayer Model::make_sa_layer(const std::string& prefix, nn::Initializer& init) {
  const std::size_t d = config_.d_model;
  SelfAttentiveLayer l;
  l.self_attn = nn::MultiHeadAttention::create(params_, prefix + ".self_attn", d, config_.heads, init);
  l.norm_self = nn::LayerNorm::create(params_, prefix + ".norm_self", d);
  l.ffn = nn::FeedForward::create(params_, prefix + ".ffn", d, config_.d_ff, init);
  l.norm_ffn = nn::LayerNorm::create(params_, prefix + ".norm_ffn", d);
  return l;
}

IncrementalLayer Model::make_incremental_layer(const std::string& prefix, bool with_context,
                                               nn::Initializer& init) {
  const std::size_t d = config_.d_model;
  IncrementalLayer l;
  l.self_attn = nn::MultiHeadAttention::create(params_, prefix + ".self_attn", d, config_.heads, init);
  l.norm_self = nn::LayerNorm::create(params_, prefix + ".norm_self", d);
  l.knowledge_attn =
      nn::MultiHeadAttention::create(params_, prefix + ".knowledge_attn", d, config_.heads, init);
  l.norm_knowledge = nn::LayerNorm::create(params_, prefix + ".norm_knowledge", d);
  if (with_context) {
    l.context_attn =
        nn::MultiHeadAttention::create(params_, prefix + ".context_attn", d, config_.heads, init);
    l.norm_context = nn::LayerNorm::create(params_, prefix + ".norm_context", d);
  }
  l.ffn = nn::FeedForward::create(params_, prefix + ".ffn", d, config_.d_ff, init);
  l.norm_ffn = nn::LayerNorm::create(params_, prefix + ".norm_ffn", d);
  return l;
}

DecoderStack Model::make_decoder(const std::string& prefix, const char* first_name,
                                 const char* second_name, nn::Initializer& init) {
  const std::size_t d = config_.d_model;
  DecoderStack stack;
  for (std::size_t i = 0; i < config_.dec_layers; ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    DecoderLayer l;
    l.self_attn = nn::MultiHeadAttention::create(params_, p + ".self_attn", d, config_.heads, init);
    l.norm_self = nn::LayerNorm::create(params_, p + ".norm_self", d);
    l.first_attn = nn::MultiHeadAttention::create(params_, p + "." + first_name, d, config_.heads, init);
    l.norm_first = nn::LayerNorm::create(params_, p + ".norm_" + first_name, d);
    l.second_attn = nn::MultiHeadAttention::create(params_, p + "." + second_name, d, config_.heads, init);
    l.norm_second = nn::LayerNorm::create(params_, p + ".norm_" + second_name, d);
    l.ffn = nn::FeedForward::create(params_, p + ".ffn", d, config_.d_ff, init);
    l.norm_ffn = nn::LayerNorm::create(params_, p + ".norm_ffn", d);
    stack.layers.push_back(std::move(l));
  }
  if (!config_.tie_output) stack.out_w = params_.add(prefix + ".out.w", init.matrix(d, config_.vocab_size));
  stack.out_b = params_.add(prefix + ".out.b", nn::Initializer::zeros(config_.vocab_size));
  return stack;
}

Tensor Model::sub(const Tensor& x, const std::function<Tensor(const Tensor&)>& f,
                  const nn::LayerNorm& norm) const {
  const bool drop = training_ && config_.dropout > 0.0;
  return nn::sublayer(x, f, norm, drop ? config_.dropout : 0.0, drop ? &dropout_rng_ : nullptr);
}

TokenIds Model::capped_doc(std::span<const int> tokens) const {
  const std::size_t n = std::min(tokens.size(), config_.max_doc_len);
  return TokenIds(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n));
}

Tensor Model::sa_encode(std::span<const int> tokens, Encoder which) const {
  require_nonempty(tokens, "sa_encode");
  const auto& layers = sa_layers(which);
  if (layers.empty()) throw ConfigError("variant " + to_string(config_.variant) + " has no utterance encoder");
  const nn::AttentionMask mask = nn::AttentionMask::key_padding(tokens.size(), tokens, data::kPad);
  Tensor x = nn::embed_sequence(tokens, embedding_, positions_);
  for (const auto& l : layers) {
    x = sub(x, [&](const Tensor& h) { return l.self_attn.forward(h, h, h, &mask); }, l.norm_self);
    x = sub(x, [&](const Tensor& h) { return l.ffn.forward(h); }, l.norm_ffn);
  }
  return x;
}

EncodedDoc Model::encode_document(std::span<const int> tokens) const {
  EncodedDoc doc;
  doc.tokens = capped_doc(tokens);
  doc.states = sa_encode(doc.tokens, Encoder::kDocument);
  return doc;
}

Tensor Model::incremental_layer_forward(const IncrementalLayer& l, const Tensor& x,
                                        std::span<const int> tokens, const EncodedDoc& doc,
                                        const ContextState* context) const {
  const std::size_t n = tokens.size();
  const nn::AttentionMask self_mask = nn::AttentionMask::key_padding(n, tokens, data::kPad);
  const nn::AttentionMask doc_mask = nn::AttentionMask::key_padding(n, doc.tokens, data::kPad);
  Tensor h = sub(x, [&](const Tensor& v) { return l.self_attn.forward(v, v, v, &self_mask); }, l.norm_self);
  h = sub(h, [&](const Tensor& v) { return l.knowledge_attn.forward(v, doc.states, doc.states, &doc_mask); },
          l.norm_knowledge);
  if (context && !context->empty() && l.context_attn) {
    const nn::AttentionMask ctx_mask = nn::AttentionMask::key_padding(n, context->tokens, data::kPad);
    h = sub(h, [&](const Tensor& v) {
          return l.context_attn->forward(v, context->states, context->states, &ctx_mask);
        }, *l.norm_context);
  }
  return sub(h, [&](const Tensor& v) { return l.ffn.forward(v); }, l.norm_ffn);
}

ContextState Model::encode_incremental(const ContextState& prev, const EncodedDoc& doc,
                                       std::span<const int> utterance) const {
  require_nonempty(utterance, "encode_incremental");
  if (config_.variant == Variant::kKat) throw ConfigError("KAT has no incremental encoder");
  Tensor h = nn::embed_sequence(utterance, embedding_, positions_);
  for (const auto& l : ite_) h = incremental_layer_forward(l, h, utterance, doc, &prev);
  ContextState out;
  out.states = std::move(h);
  out.tokens.assign(utterance.begin(), utterance.end());
  return out;
}

ContextState Model::encode_dialogue(std::span<const TokenIds> utterances,
                                    std::span<const TokenIds> docs) const {
  if (utterances.size() != docs.size()) {
    throw ConfigError("encode_dialogue: " + std::to_string(utterances.size()) + " utterances but " +
                      std::to_string(docs.size()) + " documents");
  }
  DocCache cache(*this);
  ContextState state;
  for (std::size_t k = 0; k < utterances.size(); ++k)
    state = encode_incremental(state, cache.get(docs[k]), utterances[k]);
  return state;
}

Memory Model::kat_encode(std::span<const TokenIds> utterances, const EncodedDoc& doc) const {
  if (config_.variant != Variant::kKat) throw ConfigError("kat_encode needs the KAT variant");
  TokenIds joined;
  for (const auto& u : utterances) joined.insert(joined.end(), u.begin(), u.end());
  require_nonempty(joined, "kat_encode");
  Tensor h = nn::embed_sequence(joined, embedding_, positions_);
  for (const auto& l : ite_) h = incremental_layer_forward(l, h, joined, doc, nullptr);
  return Memory{std::move(h), std::move(joined)};
}

Tensor Model::run_decoder(const DecoderStack& stack, std::span<const int> prefix,
                          const Memory& first, const Memory& second) const {
  require_prefix(prefix);
  const std::size_t n = prefix.size();
  const nn::AttentionMask self_mask = nn::AttentionMask::causal(prefix, data::kPad);
  const nn::AttentionMask first_mask = nn::AttentionMask::key_padding(n, first.tokens, data::kPad);
  const nn::AttentionMask second_mask = nn::AttentionMask::key_padding(n, second.tokens, data::kPad);
  Tensor h = nn::embed_sequence(prefix, embedding_, positions_);
  for (const auto& l : stack.layers) {
    h = sub(h, [&](const Tensor& v) { return l.self_attn.forward(v, v, v, &self_mask); }, l.norm_self);
    h = sub(h, [&](const Tensor& v) { return l.first_attn.forward(v, first.states, first.states, &first_mask); },
            l.norm_first);
    h = sub(h, [&](const Tensor& v) { return l.second_attn.forward(v, second.states, second.states, &second_mask); },
            l.norm_second);
    h = sub(h, [&](const Tensor& v) { return l.ffn.forward(v); }, l.norm_ffn);
  }
  const Tensor w = stack.out_w.defined() ? stack.out_w : transpose(embedding_);
  return add_bias(matmul(h, w), stack.out_b);
}

Tensor Model::decode_first_pass(std::span<const int> prefix, const ContextState& context,
                                std::span<const int> last_utterance) const {
  if (config_.variant != Variant::kIteDd) throw ConfigError("first pass needs the ITE+DD variant");
  if (context.empty()) throw ShapeError("decode_first_pass: empty context state");
  Memory utt{sa_encode(last_utterance, Encoder::kUtterance), TokenIds(last_utterance.begin(), last_utterance.end())};
  return run_decoder(first_, prefix, context, utt);
}

Tensor Model::decode_second_pass(std::span<const int> prefix, std::span<const int> draft,
                                 const EncodedDoc& next_doc) const {
  if (config_.variant != Variant::kIteDd) throw ConfigError("second pass needs the ITE+DD variant");
  const Memory d = encode_draft(draft);
  return run_decoder(second_, prefix, next_doc, d);
}

Tensor Model::decode_ckad(std::span<const int> prefix, const ContextState& context,
                          const EncodedDoc& next_doc) const {
  if (config_.variant != Variant::kIteCkad) throw ConfigError("decode_ckad needs the ITE+CKAD variant");
  if (context.empty()) throw ShapeError("decode_ckad: empty context state");
  return run_decoder(first_, prefix, context, next_doc);
}

Tensor Model::decode_kat(std::span<const int> prefix, const Memory& kat_encoding,
                         const EncodedDoc& next_doc) const {
  if (config_.variant != Variant::kKat) throw ConfigError("decode_kat needs the KAT variant");
  return run_decoder(first_, prefix, kat_encoding, next_doc);
}

Memory Model::encode_draft(std::span<const int> draft) const {
  if (draft.empty()) throw ShapeError("second pass: empty first-pass sequence");
  return Memory{sa_encode(draft, Encoder::kUtterance), TokenIds(draft.begin(), draft.end())};
}

Tensor Model::decode_first_pass(std::span<const int> prefix, const DecodeInputs& in) const {
  if (config_.variant != Variant::kIteDd) throw ConfigError("first pass needs the ITE+DD variant");
  return run_decoder(first_, prefix, in.context, in.last_utterance);
}

Tensor Model::decode_final_pass(std::span<const int> prefix, const DecodeInputs& in,
                                const Memory* draft_encoding) const {
  switch (config_.variant) {
    case Variant::kIteDd:
      if (!draft_encoding) throw ShapeError("second pass needs an encoded first-pass sequence");
      return run_decoder(second_, prefix, in.next_doc, *draft_encoding);
    case Variant::kIteCkad:
      return run_decoder(first_, prefix, in.context, in.next_doc);
    case Variant::kKat:
      return run_decoder(first_, prefix, in.kat_encoding, in.next_doc);
  }
  throw ConfigError("unknown variant");
}

DecodeInputs Model::prepare(const data::TrainingExample& example) const {
  if (example.context.empty()) throw ShapeError("example has no context utterances");
  if (example.context.size() != example.context_docs.size()) {
    throw ConfigError("example has " + std::to_string(example.context.size()) + " utterances but " +
                      std::to_string(example.context_docs.size()) + " documents");
  }
  DocCache cache(*this);
  DecodeInputs in;
  if (config_.variant == Variant::kKat) {
    in.kat_encoding = kat_encode(example.context, cache.get(example.context_docs.back()));
  } else {
    ContextState state;
    for (std::size_t k = 0; k < example.context.size(); ++k)
      state = encode_incremental(state, cache.get(example.context_docs[k]), example.context[k]);
    in.context = std::move(state);
  }
  if (config_.variant == Variant::kIteDd) {
    const auto& last = example.context.back();
    in.last_utterance = Memory{sa_encode(last, Encoder::kUtterance), last};
  }
  in.next_doc = cache.get(example.target_doc);
  return in;
}

PassLogits Model::forward(const data::TrainingExample& example, const TokenIds* draft_override) const {
  if (example.target.size() < 2) throw ShapeError("target must hold BOS, tokens and EOS");
  const std::span<const int> prefix(example.target.data(), example.target.size() - 1);
  const DecodeInputs in = prepare(example);
  PassLogits out;
  if (config_.variant == Variant::kIteDd) {
    out.first = decode_first_pass(prefix, in);
    if (draft_override) {
      out.draft = *draft_override;
    } else {
      // Positions whose gold token is PAD are padding; keep them PAD so the
      // re-encoding masks them.
      out.draft = argmax_tokens(out.first);
      for (std::size_t i = 0; i < out.draft.size(); ++i)
        if (example.target[i + 1] == data::kPad) out.draft[i] = data::kPad;
    }
    const Memory draft = encode_draft(out.draft);
    out.second = decode_final_pass(prefix, in, &draft);
  } else {
    out.first = decode_final_pass(prefix, in, nullptr);
  }
  return out;
}

TokenIds Model::argmax_tokens(const Tensor& logits) {
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  const auto v = logits.data();
  TokenIds out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      const int id = static_cast<int>(c);
      if (id == data::kPad || id == data::kBos) continue;
      if (best < 0 || v[r * cols + c] > best_v) {
        best = id;
        best_v = v[r * cols + c];
      }
    }
    out[r] = best;
  }
  return out;
}

}  // namespace delib::model
