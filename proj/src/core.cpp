#include "gvqg/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gvqg/world.hpp"

namespace gvqg::nn {

namespace {

void need(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw std::invalid_argument("invalid model config field '" + field + "': " + why);
}

void add(NamedParams& out, const std::string& name, Parameter& p) { out.emplace_back(name, &p); }

}  // namespace

void CoreConfig::validate() const {
  need(vocab_size > 4, "vocab_size", "must exceed the special tokens");
  need(d_model > 0, "d_model", "must be positive");
  need(heads > 0 && d_model % heads == 0, "heads", "must divide d_model");
  need(ffn_dim > 0, "ffn_dim", "must be positive");
  need(text_layers >= 0, "text_layers", "must be >= 0");
  need(image_layers >= 0, "image_layers", "must be >= 0");
  need(decoder_layers >= 1, "decoder_layers", "must be >= 1");
  need(feature_dim > 0, "feature_dim", "must be positive");
  need(max_len >= 1, "max_len", "must be >= 1");
  need(init_std > 0.0, "init_std", "must be positive");
}

Linear::Linear(int in, int out, double init_std, std::mt19937_64& rng) : weight(in, out), bias(1, out) {
  init_normal(weight, init_std, rng);
}

void Linear::collect(const std::string& prefix, NamedParams& out) {
  add(out, prefix + ".weight", weight);
  add(out, prefix + ".bias", bias);
}

LayerNorm::LayerNorm(int width) : gamma(1, width), beta(1, width) { init_constant(gamma, 1.0); }

void LayerNorm::collect(const std::string& prefix, NamedParams& out) {
  add(out, prefix + ".gamma", gamma);
  add(out, prefix + ".beta", beta);
}

FeedForward::FeedForward(int width, int hidden, double init_std, std::mt19937_64& rng)
    : up_(width, hidden, init_std, rng), down_(hidden, width, init_std, rng) {}

void FeedForward::collect(const std::string& prefix, NamedParams& out) {
  up_.collect(prefix + ".up", out);
  down_.collect(prefix + ".down", out);
}

MultiHeadAttention::MultiHeadAttention(int width, int heads, double init_std, std::mt19937_64& rng)
    : heads_(heads),
      q_(width, width, init_std, rng),
      k_(width, width, init_std, rng),
      v_(width, width, init_std, rng),
      o_(width, width, init_std, rng) {}

Var MultiHeadAttention::operator()(Graph& g, Var query, Var memory, const std::vector<char>* memory_valid,
                                   bool causal) const {
  Var ctx = g.attention(q_(g, query), k_(g, memory), v_(g, memory), heads_, memory_valid, causal);
  return o_(g, ctx);
}

void MultiHeadAttention::collect(const std::string& prefix, NamedParams& out) {
  q_.collect(prefix + ".q", out);
  k_.collect(prefix + ".k", out);
  v_.collect(prefix + ".v", out);
  o_.collect(prefix + ".o", out);
}

EncoderLayer::EncoderLayer(const CoreConfig& cfg, std::mt19937_64& rng)
    : ln_attn_(cfg.d_model),
      ln_ff_(cfg.d_model),
      attn_(cfg.d_model, cfg.heads, cfg.init_std, rng),
      ff_(cfg.d_model, cfg.ffn_dim, cfg.init_std, rng) {}

Var EncoderLayer::operator()(Graph& g, Var x, const std::vector<char>* valid) const {
  Var h = ln_attn_(g, x);
  x = g.add(x, attn_(g, h, h, valid, false));
  return g.add(x, ff_(g, ln_ff_(g, x)));
}

void EncoderLayer::collect(const std::string& prefix, NamedParams& out) {
  ln_attn_.collect(prefix + ".ln_attn", out);
  attn_.collect(prefix + ".attn", out);
  ln_ff_.collect(prefix + ".ln_ff", out);
  ff_.collect(prefix + ".ff", out);
}

EncoderStack::EncoderStack(const CoreConfig& cfg, int layers, std::mt19937_64& rng) : final_(cfg.d_model) {
  for (int i = 0; i < layers; ++i) layers_.emplace_back(cfg, rng);
}

Var EncoderStack::operator()(Graph& g, Var x, const std::vector<char>* valid) const {
  if (layers_.empty()) return x;
  for (const auto& layer : layers_) x = layer(g, x, valid);
  return final_(g, x);
}

void EncoderStack::collect(const std::string& prefix, NamedParams& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
  if (!layers_.empty()) final_.collect(prefix + ".ln_final", out);
}

TextEncoder::TextEncoder(const CoreConfig& cfg, std::mt19937_64& rng)
    : table_(cfg.vocab_size, cfg.d_model), null_row_(1, cfg.d_model), stack_(cfg, cfg.text_layers, rng) {
  init_normal(table_, cfg.init_std, rng);
  init_normal(null_row_, cfg.init_std, rng);
}

Var TextEncoder::embed(Graph& g, std::span<const int> ids) const { return g.gather_rows(g.param(table_), ids); }

Var TextEncoder::encode(Graph& g, std::span<const int> ids) const {
  if (ids.empty()) return stack_(g, g.param(null_row_));
  return stack_(g, embed(g, ids));
}

Var TextEncoder::encode_rows(Graph& g, Var rows) const {
  if (g.rows(rows) == 0) return stack_(g, g.param(null_row_));
  return stack_(g, rows);
}

void TextEncoder::collect(const std::string& prefix, NamedParams& out) {
  add(out, prefix + ".table", table_);
  add(out, prefix + ".null", null_row_);
  stack_.collect(prefix + ".stack", out);
}

ImageEncoder::ImageEncoder(const CoreConfig& cfg, std::mt19937_64& rng)
    : feature_proj_(cfg.feature_dim, cfg.d_model, cfg.init_std, rng),
      box_proj_(4, cfg.d_model, cfg.init_std, rng),
      null_row_(1, cfg.d_model),
      stack_(cfg, cfg.image_layers, rng) {
  init_normal(null_row_, cfg.init_std, rng);
}

ImageEncoding ImageEncoder::encode(Graph& g, const Matrix& features, const Matrix& boxes,
                                   const std::vector<char>& valid) const {
  return encode(g, g.constant(features), boxes, valid);
}

ImageEncoding ImageEncoder::encode(Graph& g, Var features, const Matrix& boxes, const std::vector<char>& valid) const {
  const int slots = g.rows(features);
  if (boxes.rows() != slots || boxes.cols() != 4 || static_cast<int>(valid.size()) != slots)
    throw ShapeError("image encoder: features " + g.value(features).shape_str() + ", boxes " + boxes.shape_str() +
                     ", " + std::to_string(valid.size()) + " flags");
  ImageEncoding enc;
  for (int i = 0; i < slots; ++i)
    if (valid[static_cast<std::size_t>(i)]) enc.slots.push_back(i);
  if (enc.slots.empty()) {
    enc.all_masked = true;
    enc.rows = g.param(null_row_);
    return enc;
  }
  Matrix kept_boxes(static_cast<int>(enc.slots.size()), 4);
  for (std::size_t r = 0; r < enc.slots.size(); ++r)
    std::copy_n(boxes.row(enc.slots[r]), 4, kept_boxes.row(static_cast<int>(r)));
  Var f = static_cast<int>(enc.slots.size()) == slots ? features : g.gather_rows(features, enc.slots);
  Var x = g.add(feature_proj_(g, f), box_proj_(g, g.constant(std::move(kept_boxes))));
  enc.rows = stack_(g, x);
  return enc;
}

void ImageEncoder::collect(const std::string& prefix, NamedParams& out) {
  feature_proj_.collect(prefix + ".feature", out);
  box_proj_.collect(prefix + ".box", out);
  add(out, prefix + ".null", null_row_);
  stack_.collect(prefix + ".stack", out);
}

DecoderLayer::DecoderLayer(const CoreConfig& cfg, std::mt19937_64& rng)
    : ln_self_(cfg.d_model),
      ln_cross_(cfg.d_model),
      ln_ff_(cfg.d_model),
      self_attn_(cfg.d_model, cfg.heads, cfg.init_std, rng),
      cross_attn_(cfg.d_model, cfg.heads, cfg.init_std, rng),
      ff_(cfg.d_model, cfg.ffn_dim, cfg.init_std, rng) {}

Var DecoderLayer::operator()(Graph& g, Var x, Var memory) const {
  Var h = ln_self_(g, x);
  x = g.add(x, self_attn_(g, h, h, nullptr, true));
  x = g.add(x, cross_attn_(g, ln_cross_(g, x), memory, nullptr, false));
  return g.add(x, ff_(g, ln_ff_(g, x)));
}

void DecoderLayer::collect(const std::string& prefix, NamedParams& out) {
  ln_self_.collect(prefix + ".ln_self", out);
  self_attn_.collect(prefix + ".self", out);
  ln_cross_.collect(prefix + ".ln_cross", out);
  cross_attn_.collect(prefix + ".cross", out);
  ln_ff_.collect(prefix + ".ln_ff", out);
  ff_.collect(prefix + ".ff", out);
}

Decoder::Decoder(const CoreConfig& cfg, std::mt19937_64& rng)
    : max_len_(cfg.max_len),
      vocab_(cfg.vocab_size),
      tokens_(cfg.vocab_size, cfg.d_model),
      positions_(cfg.max_len + 1, cfg.d_model),
      final_(cfg.d_model),
      out_(cfg.d_model, cfg.vocab_size, cfg.init_std, rng) {
  init_normal(tokens_, cfg.init_std, rng);
  init_normal(positions_, cfg.init_std, rng);
  for (int i = 0; i < cfg.decoder_layers; ++i) layers_.emplace_back(cfg, rng);
}

Var Decoder::hidden(Graph& g, Var memory, std::span<const int> input_ids) const {
  const int t = static_cast<int>(input_ids.size());
  if (t == 0 || t > max_len_ + 1) throw std::invalid_argument("decoder input length out of range");
  std::vector<int> pos(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) pos[static_cast<std::size_t>(i)] = i;
  Var x = g.add(g.gather_rows(g.param(tokens_), input_ids), g.gather_rows(g.param(positions_), pos));
  for (const auto& layer : layers_) x = layer(g, x, memory);
  return final_(g, x);
}

void Decoder::collect(const std::string& prefix, NamedParams& out) {
  add(out, prefix + ".tokens", tokens_);
  add(out, prefix + ".positions", positions_);
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
  final_.collect(prefix + ".ln_final", out);
  out_.collect(prefix + ".out", out);
}

NllResult teacher_forced_nll(Graph& g, const Decoder& dec, Var memory, std::span<const int> target) {
  if (target.empty()) throw std::invalid_argument("teacher_forced_nll: empty target");
  if (static_cast<int>(target.size()) > dec.max_len())
    throw std::invalid_argument("teacher_forced_nll: target longer than max_len");
  std::vector<int> inputs{world::Vocabulary::kBos};
  inputs.insert(inputs.end(), target.begin(), target.end());
  std::vector<int> labels(target.begin(), target.end());
  labels.push_back(world::Vocabulary::kEos);
  for (auto& l : labels)
    if (l == world::Vocabulary::kPad) l = -1;
  Var logits = dec.logits(g, memory, inputs);
  return {g.cross_entropy(logits, labels, -1), logits};
}

std::vector<int> decode(Graph& g, const Decoder& dec, Var memory, const DecodeOptions& opts) {
  const int limit = std::clamp(opts.max_len, 0, dec.max_len());
  std::mt19937_64 rng(opts.seed);
  std::vector<int> inputs{world::Vocabulary::kBos};
  std::vector<int> out;
  while (static_cast<int>(out.size()) < limit) {
    Var h = dec.hidden(g, memory, inputs);
    Var last = dec.project(g, g.slice_rows(h, g.rows(h) - 1, 1));
    const Matrix& l = g.value(last);
    std::vector<double> scores(l.values().begin(), l.values().end());
    scores[world::Vocabulary::kPad] = -std::numeric_limits<double>::infinity();
    scores[world::Vocabulary::kBos] = -std::numeric_limits<double>::infinity();
    int next = 0;
    if (opts.temperature <= 0.0) {
      next = static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    } else {
      const double mx = *std::max_element(scores.begin(), scores.end());
      std::vector<double> w(scores.size());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp((scores[i] - mx) / opts.temperature);
      next = std::discrete_distribution<int>(w.begin(), w.end())(rng);
    }
    if (next == world::Vocabulary::kEos) break;
    out.push_back(next);
    inputs.push_back(next);
  }
  return out;
}

}  // namespace gvqg::nn
