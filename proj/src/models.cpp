#include "gvqg/models.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

#include "gvqg/realism.hpp"

namespace gvqg::models {

using nn::Graph;
using nn::Var;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::explicit_guided: return "explicit";
    case Variant::implicit: return "implicit";
    case Variant::variational: return "variational";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view s) {
  for (auto v : {Variant::baseline, Variant::explicit_guided, Variant::implicit, Variant::variational})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::string_view to_string(TextInput t) {
  switch (t) {
    case TextInput::guided: return "guided";
    case TextInput::category: return "category";
    case TextInput::objects: return "objects";
  }
  return "?";
}

std::optional<TextInput> parse_text_input(std::string_view s) {
  for (auto t : {TextInput::guided, TextInput::category, TextInput::objects})
    if (to_string(t) == s) return t;
  return std::nullopt;
}

void ModelConfig::validate() const {
  core.validate();
  auto need = [](bool ok, const char* field, const char* why) {
    if (!ok) throw std::invalid_argument(std::string("invalid model config field '") + field + "': " + why);
  };
  need(num_categories >= 1 && num_categories <= 16, "num_categories", "must be in 1..16");
  need(k >= 1, "k", "must be >= 1");
  need(head_hidden > 0, "head_hidden", "must be positive");
  need(variational_layers >= 1, "variational_layers", "must be >= 1");
  need(kl_weight >= 0.0, "kl_weight", "must be >= 0");
  need(!category_only || variant == Variant::implicit, "category_only", "only applies to the implicit variant");
  gumbel.validate();
}

int argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax of empty vector");
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

SceneInput make_scene_input(const world::ObjectDetection& det, const world::Vocabulary& vocab) {
  SceneInput in;
  in.features = det.features;
  in.boxes = det.boxes;
  in.valid = det.valid;
  in.label_ids = vocab.encode(det.labels);
  return in;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const auto& c = cfg_.core;
  image_ = nn::ImageEncoder(c, rng);
  decoder_ = nn::Decoder(c, rng);
  if (cfg_.variant == Variant::baseline) return;
  text_ = nn::TextEncoder(c, rng);
  if (cfg_.variant == Variant::explicit_guided) return;

  category_hidden_ = nn::Linear(c.d_model, cfg_.head_hidden, c.init_std, rng);
  category_out_ = nn::Linear(cfg_.head_hidden, cfg_.num_categories, c.init_std, rng);
  category_rows_ = nn::Parameter(cfg_.num_categories, c.d_model);
  nn::init_normal(category_rows_, c.init_std, rng);
  if (cfg_.variant == Variant::implicit) {
    if (!cfg_.category_only) {
      score_hidden_ = nn::Linear(c.d_model, cfg_.head_hidden, c.init_std, rng);
      score_out_ = nn::Linear(cfg_.head_hidden, 1, c.init_std, rng);
    }
    return;
  }
  cls_ = nn::Parameter(1, c.d_model);
  nn::init_normal(cls_, c.init_std, rng);
  joint_ = nn::EncoderStack(c, cfg_.variational_layers, rng);
  q_hidden_ = nn::Linear(4 * c.d_model, cfg_.head_hidden, c.init_std, rng);
  q_out_ = nn::Linear(cfg_.head_hidden, 1, c.init_std, rng);
  p_hidden_ = nn::Linear(3 * c.d_model, cfg_.head_hidden, c.init_std, rng);
  p_out_ = nn::Linear(cfg_.head_hidden, 1, c.init_std, rng);
}

nn::NamedParams Model::named_parameters() {
  nn::NamedParams out;
  image_.collect("image", out);
  decoder_.collect("decoder", out);
  if (cfg_.variant == Variant::baseline) return out;
  text_.collect("text", out);
  if (cfg_.variant == Variant::explicit_guided) return out;
  category_hidden_.collect("category.hidden", out);
  category_out_.collect("category.out", out);
  out.emplace_back("category.rows", &category_rows_);
  if (cfg_.variant == Variant::implicit) {
    if (!cfg_.category_only) {
      score_hidden_.collect("score.hidden", out);
      score_out_.collect("score.out", out);
    }
    return out;
  }
  out.emplace_back("variational.cls", &cls_);
  joint_.collect("variational.encode", out);
  q_hidden_.collect("variational.q.hidden", out);
  q_out_.collect("variational.q.out", out);
  p_hidden_.collect("variational.p.hidden", out);
  p_out_.collect("variational.p.out", out);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const auto& [name, p] : named_parameters()) n += p->value.size();
  return n;
}

Model::Encoded Model::encode_inputs(Graph& g, const SceneInput& in) const {
  Encoded enc;
  enc.image = image_.encode(g, in.features, in.boxes, in.valid);
  if (cfg_.variant == Variant::implicit || cfg_.variant == Variant::variational) {
    if (in.detected() == 0) throw std::invalid_argument("implicit models need at least one detected object");
    enc.objects = text_.embed(g, in.label_ids);
  }
  return enc;
}

Var Model::explicit_text(Graph& g, const Guidance& guidance) const {
  if (guidance.empty()) throw std::invalid_argument("explicit model needs concepts or a category");
  std::vector<int> ids = guidance.concept_ids;
  if (guidance.category_token >= 0) ids.push_back(guidance.category_token);
  return text_.encode(g, ids);
}

Var Model::score_logits(Graph& g, Var objects) const {
  return g.transpose(score_out_(g, g.gelu(score_hidden_(g, objects))));
}

std::pair<Var, Var> Model::variational_logits(Graph& g, const Encoded& enc, const std::vector<int>* qa) const {
  const int n = g.rows(enc.objects);
  Var cls = g.param(cls_);
  const std::array<Var, 3> gen_parts{cls, enc.objects, enc.image.rows};
  Var m_gen = joint_(g, g.concat_rows(gen_parts));
  Var cls_gen = g.slice_rows(m_gen, 0, 1);
  Var rows = g.slice_rows(m_gen, 1, n);
  const std::array<Var, 3> p_parts{rows, g.repeat_row(cls_gen, n), g.mul_row(rows, cls_gen)};
  Var p_logits = g.transpose(p_out_(g, g.gelu(p_hidden_(g, g.concat_cols(p_parts)))));
  if (qa == nullptr) return {p_logits, Var{}};
  Var e_qa = qa->empty() ? g.param(cls_) : text_.embed(g, *qa);
  const std::array<Var, 3> var_parts{cls, e_qa, m_gen};
  Var m_var = joint_(g, g.concat_rows(var_parts));
  Var cls_var = g.slice_rows(m_var, 0, 1);
  // Object rows of M_var, which have attended to the QA tokens.
  Var var_rows = g.slice_rows(m_var, 2 + g.rows(e_qa), n);
  const std::array<Var, 4> q_parts{var_rows, g.repeat_row(cls_gen, n), g.repeat_row(cls_var, n),
                                   g.mul_row(var_rows, cls_var)};
  Var q_logits = g.transpose(q_out_(g, g.gelu(q_hidden_(g, g.concat_cols(q_parts)))));
  return {p_logits, q_logits};
}

Var Model::category_logits(Graph& g, Var masked_objects) const {
  return category_out_(g, g.gelu(category_hidden_(g, g.sum_rows(masked_objects))));
}

Var Model::memory_with_mask(Graph& g, const Encoded& enc, Var mask, int category) const {
  Var text = text_.encode_rows(g, g.scale_rows(enc.objects, mask));
  const std::array<int, 1> cat{category};
  const std::array<Var, 3> parts{enc.image.rows, text, g.gather_rows(g.param(category_rows_), cat)};
  return g.concat_rows(parts);
}

namespace {

Matrix indicator(int n, const std::vector<int>& idx) {
  Matrix m(1, n);
  for (int i : idx) {
    if (i < 0 || i >= n) throw std::out_of_range("slot index out of range");
    m[static_cast<std::size_t>(i)] = 1.0;
  }
  return m;
}

}  // namespace

LossTerms Model::loss(Graph& g, const SceneInput& in, const Guidance* guidance, const Targets& targets,
                      std::mt19937_64& rng) const {
  LossTerms out;
  const Encoded enc = encode_inputs(g, in);
  if (cfg_.variant == Variant::baseline || cfg_.variant == Variant::explicit_guided) {
    Var memory = enc.image.rows;
    if (cfg_.variant == Variant::explicit_guided) {
      if (guidance == nullptr) throw std::invalid_argument("explicit model needs guidance");
      const std::array<Var, 2> parts{explicit_text(g, *guidance), enc.image.rows};
      memory = g.concat_rows(parts);
    }
    out.total = nn::teacher_forced_nll(g, decoder_, memory, targets.question).loss;
    out.question_nll = g.scalar(out.total);
    return out;
  }

  const int n = in.detected();
  const int k = std::min(cfg_.k, n);
  if (targets.category < 0 || targets.category >= cfg_.num_categories)
    throw std::invalid_argument("training target category out of range");
  const std::array<int, 1> cat_target{targets.category};

  if (cfg_.variant == Variant::implicit) {
    Var sampled;
    Var gold;
    Var logits;
    if (cfg_.category_only) {
      sampled = gold = g.constant(Matrix(1, n, 1.0));
    } else {
      if (targets.gold_slots.empty()) throw std::invalid_argument("implicit training needs gold slots");
      logits = score_logits(g, enc.objects);
      sampled = sampling::sample_k_hot(g, logits, k, cfg_.gumbel, rng);
      gold = g.constant(indicator(n, targets.gold_slots));
    }
    Var cat_logits = category_logits(g, g.scale_rows(enc.objects, sampled));
    Var ce = g.cross_entropy(cat_logits, cat_target);
    const int predicted = argmax(g.value(cat_logits).values());
    Var nll = nn::teacher_forced_nll(g, decoder_, memory_with_mask(g, enc, gold, predicted), targets.question).loss;
    out.question_nll = g.scalar(nll);
    out.category_ce = g.scalar(ce);
    out.total = g.add(nll, ce);
    if (logits.valid()) {
      Var se = g.bce_with_logits(logits, g.value(gold).values());
      out.start_end = g.scalar(se);
      out.total = g.add(out.total, se);
    }
    return out;
  }

  auto [p_logits, q_logits] = variational_logits(g, enc, &targets.qa);
  Var z = sampling::sample_k_hot(g, q_logits, k, cfg_.gumbel, rng);
  Var cat_logits = category_logits(g, g.scale_rows(enc.objects, z));
  Var ce = g.cross_entropy(cat_logits, cat_target);
  const int predicted = argmax(g.value(cat_logits).values());
  Var nll = nn::teacher_forced_nll(g, decoder_, memory_with_mask(g, enc, z, predicted), targets.question).loss;
  Var kl = g.kl_from_logits(q_logits, p_logits);
  out.question_nll = g.scalar(nll);
  out.category_ce = g.scalar(ce);
  out.kl = g.scalar(kl);
  out.q_probs = sampling::softmax(g.value(q_logits).values());
  out.p_probs = sampling::softmax(g.value(p_logits).values());
  out.total = g.add(g.add(nll, g.scale(kl, cfg_.kl_weight)), ce);
  if (cfg_.gold_recon && !targets.gold_slots.empty()) {
    Var gold = g.constant(indicator(n, targets.gold_slots));
    Var gold_nll = nn::teacher_forced_nll(g, decoder_, memory_with_mask(g, enc, gold, predicted), targets.question).loss;
    out.gold_nll = g.scalar(gold_nll);
    out.total = g.add(out.total, gold_nll);
  }
  return out;
}

GenerationOutput Model::generate(const SceneInput& in, const Guidance* guidance, const GenerateOptions& opts) const {
  realism::InferenceScope scope;
  Graph g(false);
  GenerationOutput out;
  const Encoded enc = encode_inputs(g, in);
  Var memory = enc.image.rows;
  nn::DecodeOptions dopts = opts.decode;
  dopts.seed = opts.seed;

  if (cfg_.variant == Variant::explicit_guided) {
    if (guidance == nullptr) throw std::invalid_argument("explicit model needs guidance");
    const std::array<Var, 2> parts{explicit_text(g, *guidance), enc.image.rows};
    memory = g.concat_rows(parts);
  } else if (cfg_.variant != Variant::baseline) {
    const int n = in.detected();
    const int k = std::min(cfg_.k, n);
    std::mt19937_64 rng(opts.seed);
    sampling::GuidanceMask mask;
    if (cfg_.category_only) {
      std::vector<int> all(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
      mask = sampling::mask_from_indices(n, all, sampling::MaskMode::gold);
    } else {
      Var logits = cfg_.variant == Variant::implicit ? score_logits(g, enc.objects)
                                                     : variational_logits(g, enc, nullptr).first;
      out.slot_probs = sampling::softmax(g.value(logits).values());
      switch (opts.mask_mode) {
        case sampling::MaskMode::gold:
          if (opts.gold_slots.empty()) throw std::invalid_argument("gold mask mode needs gold slot indices");
          mask = sampling::mask_from_indices(n, opts.gold_slots, sampling::MaskMode::gold);
          break;
        case sampling::MaskMode::random: mask = sampling::random_k_subset(n, k, rng); break;
        case sampling::MaskMode::predicted:
          mask = sampling::sample_k_hot(g.value(logits).values(), k, cfg_.gumbel, rng);
          break;
      }
    }
    Var z = g.constant(Matrix::row_vector(mask.z));
    Var cat_logits = category_logits(g, g.scale_rows(enc.objects, z));
    out.category_probs = sampling::softmax(g.value(cat_logits).values());
    out.category = argmax(out.category_probs);
    memory = memory_with_mask(g, enc, z, out.category);

    out.mask = mask;
    out.mask.z.resize(static_cast<std::size_t>(in.slots()), 0.0);
    out.mask.soft.resize(static_cast<std::size_t>(in.slots()), 0.0);
    out.has_mask = true;
  }
  out.question = nn::decode(g, decoder_, memory, dopts);
  return out;
}

std::vector<double> Model::selection_logits(const SceneInput& in) const {
  if (cfg_.variant == Variant::baseline || cfg_.variant == Variant::explicit_guided || cfg_.category_only)
    throw std::logic_error("model has no object selection head");
  Graph g(false);
  const Encoded enc = encode_inputs(g, in);
  Var logits = cfg_.variant == Variant::implicit ? score_logits(g, enc.objects) : variational_logits(g, enc, nullptr).first;
  const auto v = g.value(logits).values();
  return {v.begin(), v.end()};
}

std::pair<std::vector<double>, std::vector<double>> Model::variational_distributions(const SceneInput& in,
                                                                                     const std::vector<int>& qa) const {
  if (cfg_.variant != Variant::variational) throw std::logic_error("not a variational model");
  Graph g(false);
  const Encoded enc = encode_inputs(g, in);
  auto [p, q] = variational_logits(g, enc, &qa);
  return {sampling::softmax(g.value(q).values()), sampling::softmax(g.value(p).values())};
}

}  // namespace gvqg::models
