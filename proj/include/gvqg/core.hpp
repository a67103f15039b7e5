#pragma once
// Transformer building blocks shared by every model variant: a set encoder
// for text (no positions), an image encoder whose positional signal comes from
// bounding boxes, and a causal decoder with cross-attention.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gvqg/autograd.hpp"
#include "gvqg/optim.hpp"

namespace gvqg::nn {

struct CoreConfig {
  int vocab_size = 0;
  int d_model = 64;
  int heads = 4;
  int ffn_dim = 128;
  int text_layers = 2;
  int image_layers = 2;
  int decoder_layers = 2;
  int feature_dim = 64;
  int max_len = 24;
  double init_std = 0.02;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, double init_std, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x) const { return g.linear(x, g.param(weight), g.param(bias)); }
  void collect(const std::string& prefix, NamedParams& out);

  Parameter weight;  // in x out
  Parameter bias;    // 1 x out
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int width);
  Var operator()(Graph& g, Var x) const { return g.layer_norm(x, g.param(gamma), g.param(beta)); }
  void collect(const std::string& prefix, NamedParams& out);

  Parameter gamma;
  Parameter beta;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(int width, int hidden, double init_std, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x) const { return down_(g, g.gelu(up_(g, x))); }
  void collect(const std::string& prefix, NamedParams& out);

 private:
  Linear up_;
  Linear down_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int width, int heads, double init_std, std::mt19937_64& rng);
  Var operator()(Graph& g, Var query, Var memory, const std::vector<char>* memory_valid, bool causal) const;
  void collect(const std::string& prefix, NamedParams& out);

 private:
  int heads_ = 1;
  Linear q_, k_, v_, o_;
};

class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const CoreConfig& cfg, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x, const std::vector<char>* valid) const;
  void collect(const std::string& prefix, NamedParams& out);

 private:
  LayerNorm ln_attn_, ln_ff_;
  MultiHeadAttention attn_;
  FeedForward ff_;
};

// Pre-LN encoder layers followed by a final LayerNorm (omitted with zero layers).
class EncoderStack {
 public:
  EncoderStack() = default;
  EncoderStack(const CoreConfig& cfg, int layers, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x, const std::vector<char>* valid = nullptr) const;
  int layers() const { return static_cast<int>(layers_.size()); }
  void collect(const std::string& prefix, NamedParams& out);

 private:
  std::vector<EncoderLayer> layers_;
  LayerNorm final_;
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const CoreConfig& cfg, std::mt19937_64& rng);

  // Embedding lookup; rows follow ids.
  Var embed(Graph& g, std::span<const int> ids) const;
  // Set encoding of token ids. Empty input yields the learned NULL row.
  Var encode(Graph& g, std::span<const int> ids) const;
  // Set encoding of precomputed rows (e.g. masked object embeddings).
  Var encode_rows(Graph& g, Var rows) const;
  const Parameter& table() const { return table_; }
  void collect(const std::string& prefix, NamedParams& out);

 private:
  Parameter table_;     // vocab x d
  Parameter null_row_;  // 1 x d
  EncoderStack stack_;
};

struct ImageEncoding {
  Var rows;                // count x d for valid slots (1 x d NULL row when all masked)
  std::vector<int> slots;  // source slot of each row
  bool all_masked = false;
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const CoreConfig& cfg, std::mt19937_64& rng);

  // features: k_o x d_f, boxes: k_o x 4, valid: k_o flags. Padding slots are
  // excluded from attention and from the output.
  ImageEncoding encode(Graph& g, const Matrix& features, const Matrix& boxes, const std::vector<char>& valid) const;
  // Same, with features as a graph variable (for gradient checks).
  ImageEncoding encode(Graph& g, Var features, const Matrix& boxes, const std::vector<char>& valid) const;
  void collect(const std::string& prefix, NamedParams& out);

 private:
  Linear feature_proj_;
  Linear box_proj_;
  Parameter null_row_;
  EncoderStack stack_;
};

class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(const CoreConfig& cfg, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x, Var memory) const;
  void collect(const std::string& prefix, NamedParams& out);

 private:
  LayerNorm ln_self_, ln_cross_, ln_ff_;
  MultiHeadAttention self_attn_, cross_attn_;
  FeedForward ff_;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const CoreConfig& cfg, std::mt19937_64& rng);

  // Hidden states (T x d) for decoder inputs starting with BOS.
  Var hidden(Graph& g, Var memory, std::span<const int> input_ids) const;
  Var project(Graph& g, Var hidden_rows) const { return out_(g, hidden_rows); }
  Var logits(Graph& g, Var memory, std::span<const int> input_ids) const { return project(g, hidden(g, memory, input_ids)); }
  int max_len() const { return max_len_; }
  int vocab_size() const { return vocab_; }
  void collect(const std::string& prefix, NamedParams& out);

 private:
  int max_len_ = 24;
  int vocab_ = 0;
  Parameter tokens_;     // vocab x d
  Parameter positions_;  // (max_len + 1) x d
  std::vector<DecoderLayer> layers_;
  LayerNorm final_;
  Linear out_;
};

struct NllResult {
  Var loss;
  Var logits;
};

// Mean token NLL of target (without BOS/EOS) followed by EOS. Throws on an
// empty target or one longer than max_len.
NllResult teacher_forced_nll(Graph& g, const Decoder& dec, Var memory, std::span<const int> target);

struct DecodeOptions {
  int max_len = 24;
  double temperature = 0.0;  // 0 selects greedy decoding
  std::uint64_t seed = 0;
};

// Emitted tokens without BOS/EOS; at most max_len tokens. PAD and BOS are never emitted.
std::vector<int> decode(Graph& g, const Decoder& dec, Var memory, const DecodeOptions& opts);

}  // namespace gvqg::nn
