#pragma once
// The four question generators: image-only baseline, explicitly guided,
// implicitly guided (Gumbel-Softmax object selection) and the variational
// implicit model.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gvqg/core.hpp"
#include "gvqg/sampling.hpp"
#include "gvqg/world.hpp"

namespace gvqg::models {

enum class Variant { baseline, explicit_guided, implicit, variational };
std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view s);

// What the explicit model's text encoder receives.
enum class TextInput { guided, category, objects };
std::string_view to_string(TextInput t);
std::optional<TextInput> parse_text_input(std::string_view s);

struct ModelConfig {
  Variant variant = Variant::explicit_guided;
  nn::CoreConfig core;
  int num_categories = 8;
  int k = 2;
  int head_hidden = 64;
  int variational_layers = 1;
  TextInput text_input = TextInput::guided;
  // Implicit only: condition on every detected object, no object selection.
  bool category_only = false;
  sampling::GumbelConfig gumbel;
  double kl_weight = 1.0;
  // Variational only: also teacher-force the decoder on the gold object mask.
  bool gold_recon = true;

  void validate() const;
};

// Everything a model may see at inference: image features and detected labels.
struct SceneInput {
  Matrix features;          // k_o x d_f
  Matrix boxes;             // k_o x 4
  std::vector<char> valid;  // k_o flags
  std::vector<int> label_ids;  // vocabulary ids, one per valid slot in slot order
  int slots() const { return static_cast<int>(valid.size()); }
  int detected() const { return static_cast<int>(label_ids.size()); }
};

SceneInput make_scene_input(const world::ObjectDetection& det, const world::Vocabulary& vocab);

// Explicit guidance: concept token ids and a category token id (-1 when absent).
struct Guidance {
  std::vector<int> concept_ids;
  int category_token = -1;
  bool empty() const { return concept_ids.empty() && category_token < 0; }
};

// Training targets. Never passed to a generate() path.
struct Targets {
  std::vector<int> question;    // token ids, no BOS/EOS
  int category = -1;            // taxonomy index
  std::vector<int> gold_slots;  // indices into the detected (valid) slots
  std::vector<int> qa;          // question followed by answer, token ids
};

struct LossTerms {
  nn::Var total;
  double question_nll = 0.0;
  double category_ce = 0.0;
  double start_end = 0.0;
  double kl = 0.0;
  double gold_nll = 0.0;  // variational gold-mask reconstruction
  std::vector<double> q_probs;
  std::vector<double> p_probs;
};

struct GenerateOptions {
  sampling::MaskMode mask_mode = sampling::MaskMode::predicted;
  std::vector<int> gold_slots;  // required for MaskMode::gold
  std::uint64_t seed = 0;
  nn::DecodeOptions decode;
};

struct GenerationOutput {
  std::vector<int> question;
  int category = -1;                // predicted taxonomy index (implicit paths)
  std::vector<double> category_probs;
  sampling::GuidanceMask mask;      // over k_o slots (implicit paths)
  std::vector<double> slot_probs;   // softmax of the selection logits over detected slots
  bool has_mask = false;
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  Variant variant() const { return cfg_.variant; }
  nn::NamedParams named_parameters();
  std::size_t parameter_count();

  // Training loss for one example; builds into g. Explicit models need guidance.
  LossTerms loss(nn::Graph& g, const SceneInput& in, const Guidance* guidance, const Targets& targets,
                 std::mt19937_64& rng) const;

  // Inference. The variational model has no QA input here by construction.
  GenerationOutput generate(const SceneInput& in, const Guidance* guidance, const GenerateOptions& opts) const;

  // Selection logits over detected slots (implicit: score head; variational: prior head).
  std::vector<double> selection_logits(const SceneInput& in) const;
  // Posterior and prior slot distributions of the variational model.
  std::pair<std::vector<double>, std::vector<double>> variational_distributions(const SceneInput& in,
                                                                                 const std::vector<int>& qa) const;

 private:
  struct Encoded {
    nn::ImageEncoding image;
    nn::Var objects;  // detected x d label embeddings
  };
  struct Selection {
    nn::Var logits;      // 1 x detected, invalid when not applicable
    nn::Var q_logits;    // variational posterior
  };

  Encoded encode_inputs(nn::Graph& g, const SceneInput& in) const;
  nn::Var explicit_text(nn::Graph& g, const Guidance& guidance) const;
  nn::Var score_logits(nn::Graph& g, nn::Var objects) const;
  std::pair<nn::Var, nn::Var> variational_logits(nn::Graph& g, const Encoded& enc,
                                                 const std::vector<int>* qa) const;
  nn::Var category_logits(nn::Graph& g, nn::Var masked_objects) const;
  nn::Var memory_with_mask(nn::Graph& g, const Encoded& enc, nn::Var mask, int category) const;

  ModelConfig cfg_;
  nn::TextEncoder text_;
  nn::ImageEncoder image_;
  nn::Decoder decoder_;
  // Implicit and variational heads.
  nn::Linear score_hidden_, score_out_;
  nn::Linear category_hidden_, category_out_;
  nn::Parameter category_rows_;
  // Variational encoder and heads.
  nn::Parameter cls_;
  nn::EncoderStack joint_;
  nn::Linear q_hidden_, q_out_, p_hidden_, p_out_;
};

int argmax(std::span<const double> v);

}  // namespace gvqg::models
