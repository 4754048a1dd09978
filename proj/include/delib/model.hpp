#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "delib/data.hpp"
#include "delib/nn.hpp"
#include "delib/tensor.hpp"

namespace delib::model {

using data::TokenIds;

// ITE+DD: incremental encoder + two-pass deliberation decoder.
// ITE+CKAD: incremental encoder + one decoder over context and knowledge.
// KAT: knowledge-attention encoder over the concatenated context + one
//      decoder over that encoding and knowledge.
enum class Variant { kIteDd, kIteCkad, kKat };

std::string to_string(Variant v);
Variant parse_variant(std::string_view tag);  // throws ConfigError

struct ModelConfig {
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t d_ff = 2048;
  std::size_t sa_layers = 3;
  std::size_t ite_layers = 3;
  std::size_t dec_layers = 3;
  std::size_t vocab_size = 0;
  std::size_t window = 3;
  Variant variant = Variant::kIteDd;
  double dropout = 0.0;
  std::size_t max_doc_len = 256;
  bool tie_output = false;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Encoded token sequence used as attention keys/values; `tokens` drives
/// the padding mask.
struct Memory {
  Tensor states;
  TokenIds tokens;
};

/// d = SA_s(document).
struct EncodedDoc : Memory {};

/// c^(k): per-token state of the latest encoded utterance. The default
/// value is the empty state c^(0).
struct ContextState : Memory {
  bool empty() const { return tokens.empty(); }
};

enum class Encoder { kDocument, kUtterance };

struct SelfAttentiveLayer {
  nn::MultiHeadAttention self_attn;
  nn::LayerNorm norm_self;
  nn::FeedForward ffn;
  nn::LayerNorm norm_ffn;
};

/// Encoder layer with knowledge attention and, for the incremental
/// encoder, context attention. KAT layers leave `context` unset.
struct IncrementalLayer {
  nn::MultiHeadAttention self_attn;
  nn::LayerNorm norm_self;
  nn::MultiHeadAttention knowledge_attn;
  nn::LayerNorm norm_knowledge;
  std::optional<nn::MultiHeadAttention> context_attn;
  std::optional<nn::LayerNorm> norm_context;
  nn::FeedForward ffn;
  nn::LayerNorm norm_ffn;
};

/// Causal self-attention, then attention over two memories in order, then FFN.
struct DecoderLayer {
  nn::MultiHeadAttention self_attn;
  nn::LayerNorm norm_self;
  nn::MultiHeadAttention first_attn;
  nn::LayerNorm norm_first;
  nn::MultiHeadAttention second_attn;
  nn::LayerNorm norm_second;
  nn::FeedForward ffn;
  nn::LayerNorm norm_ffn;
};

struct DecoderStack {
  std::vector<DecoderLayer> layers;
  Tensor out_w;  // [d x V]; unset when tied to the embedding
  Tensor out_b;  // [V]
};

struct PassLogits {
  Tensor first;   // pass-1 logits, or the only pass for single-pass variants
  Tensor second;  // pass-2 logits (ITE+DD only)
  TokenIds draft; // pass-1 tokens fed to pass 2 (ITE+DD only)

  bool two_pass() const { return second.defined(); }
  const Tensor& final_logits() const { return two_pass() ? second : first; }
};

/// Memories shared by every decoding step of one example.
struct DecodeInputs {
  ContextState context;     // ITE variants
  Memory last_utterance;    // SA_u(u^(k)), ITE+DD
  Memory kat_encoding;      // KAT
  EncodedDoc next_doc;      // d^(k+1)
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const Tensor& embedding() const { return embedding_; }
  const nn::PositionTable& positions() const { return positions_; }

  /// Dropout is active only in training mode.
  void set_training(bool training) { training_ = training; }

  // --- encoders ---
  Tensor sa_encode(std::span<const int> tokens, Encoder which) const;
  EncodedDoc encode_document(std::span<const int> tokens) const;
  ContextState encode_incremental(const ContextState& prev, const EncodedDoc& doc,
                                  std::span<const int> utterance) const;
  ContextState encode_dialogue(std::span<const TokenIds> utterances,
                               std::span<const TokenIds> docs) const;
  // KAT encoder over the concatenation of `utterances`.
  Memory kat_encode(std::span<const TokenIds> utterances, const EncodedDoc& doc) const;

  // One incremental-encoder layer; `context` null or empty bypasses context attention.
  // `tokens` are the utterance ids behind `x`, for the padding mask.
  Tensor incremental_layer_forward(const IncrementalLayer& layer, const Tensor& x,
                                   std::span<const int> tokens, const EncodedDoc& doc,
                                   const ContextState* context) const;
  const std::vector<IncrementalLayer>& ite_layers() const { return ite_; }
  const std::vector<SelfAttentiveLayer>& sa_layers(Encoder which) const {
    return which == Encoder::kDocument ? sa_doc_ : sa_utt_;
  }

  // --- decoders; prefix must start with BOS ---
  Tensor decode_first_pass(std::span<const int> prefix, const ContextState& context,
                           std::span<const int> last_utterance) const;
  Tensor decode_second_pass(std::span<const int> prefix, std::span<const int> draft,
                            const EncodedDoc& next_doc) const;
  Tensor decode_ckad(std::span<const int> prefix, const ContextState& context,
                     const EncodedDoc& next_doc) const;
  Tensor decode_kat(std::span<const int> prefix, const Memory& kat_encoding,
                    const EncodedDoc& next_doc) const;
  // Memory-level entry points used by step-wise decoding.
  Tensor decode_first_pass(std::span<const int> prefix, const DecodeInputs& in) const;
  Tensor decode_final_pass(std::span<const int> prefix, const DecodeInputs& in,
                           const Memory* draft_encoding) const;
  Memory encode_draft(std::span<const int> draft) const;

  /// Encodes everything the decoders need for one example.
  DecodeInputs prepare(const data::TrainingExample& example) const;

  /// Teacher-forced forward over example.target. For ITE+DD the pass-1
  /// argmax tokens (or `draft_override`) are re-encoded without gradient
  /// through the token choice.
  PassLogits forward(const data::TrainingExample& example,
                     const TokenIds* draft_override = nullptr) const;

  /// Per-row argmax, never choosing PAD or BOS.
  static TokenIds argmax_tokens(const Tensor& logits);

  std::size_t parameter_count() const { return params_.scalar_count(); }

 private:
  SelfAttentiveLayer make_sa_layer(const std::string& prefix, nn::Initializer& init);
  IncrementalLayer make_incremental_layer(const std::string& prefix, bool with_context,
                                          nn::Initializer& init);
  DecoderStack make_decoder(const std::string& prefix, const char* first_name,
                            const char* second_name, nn::Initializer& init);
  Tensor run_decoder(const DecoderStack& stack, std::span<const int> prefix, const Memory& first,
                     const Memory& second) const;
  Tensor sub(const Tensor& x, const std::function<Tensor(const Tensor&)>& f,
             const nn::LayerNorm& norm) const;
  TokenIds capped_doc(std::span<const int> tokens) const;

  ModelConfig config_;
  nn::ParamStore params_;
  nn::PositionTable positions_;
  Tensor embedding_;
  std::vector<SelfAttentiveLayer> sa_doc_;
  std::vector<SelfAttentiveLayer> sa_utt_;
  std::vector<IncrementalLayer> ite_;  // KAT encoder layers for the KAT variant
  DecoderStack first_;                 // pass 1, or the single decoder
  DecoderStack second_;                // pass 2 (ITE+DD)
  bool training_ = false;
  mutable std::mt19937_64 dropout_rng_;
};

}  // namespace delib::model
