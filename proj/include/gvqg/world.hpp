#pragma once
// Synthetic scene world: a deterministic stand-in for images, detections,
// captions and categorised question/answer pairs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gvqg/tensor.hpp"

namespace gvqg::world {

struct ConfigError : std::invalid_argument {
  ConfigError(const std::string& field, const std::string& why)
      : std::invalid_argument("invalid world config field '" + field + "': " + why), field_name(field) {}
  std::string field_name;
};

using Tokens = std::vector<std::string>;

struct LabelInfo {
  std::string name;
  std::string plural;
  std::string activity;
  std::string material;
  double salience;
};

const std::vector<LabelInfo>& ontology();
const LabelInfo* find_label(std::string_view name);
const std::vector<std::string>& colors();

class CategoryTaxonomy {
 public:
  static CategoryTaxonomy desk_default();
  explicit CategoryTaxonomy(std::vector<std::string> names);

  const std::vector<std::string>& names() const { return names_; }
  int size() const { return static_cast<int>(names_.size()); }
  // -1 when absent.
  int index(std::string_view name) const;
  const std::string& name(int i) const { return names_.at(static_cast<std::size_t>(i)); }
  // Throws ConfigError("taxonomy", ...) on duplicates, missing "other" or > 16 names.
  void validate() const;

 private:
  std::vector<std::string> names_;
};

// Category names that have a question template.
const std::vector<std::string>& templated_categories();

struct ObjectInstance {
  std::string label;
  std::string color;
  int count_group = 1;
  std::array<double, 4> bbox{};  // x1, y1, x2, y2 in [0, 1]
  std::vector<double> feature;
};

enum class Split { train, val };
std::string_view to_string(Split s);
std::optional<Split> parse_split(std::string_view s);

struct Scene {
  std::string scene_id;
  std::vector<ObjectInstance> objects;
  Tokens caption_gt;
  Split split = Split::train;
};

// Ground-truth question/answer. The question, answer and template hint are
// only reachable through accessors that report to the realism guard.
class QAInstance {
 public:
  QAInstance() = default;
  QAInstance(std::string scene_id, Tokens question, Tokens answer, std::string category, Tokens gold_hint)
      : scene_id_(std::move(scene_id)),
        category_(std::move(category)),
        question_(std::move(question)),
        answer_(std::move(answer)),
        hint_(std::move(gold_hint)) {}

  const std::string& scene_id() const { return scene_id_; }
  const std::string& category() const { return category_; }
  const Tokens& question() const;
  const Tokens& answer() const;
  const Tokens& gold_concepts_hint() const;
  // Question tokens followed by answer tokens.
  Tokens qa_tokens() const;

 private:
  std::string scene_id_;
  std::string category_;
  Tokens question_;
  Tokens answer_;
  Tokens hint_;
};

struct DetectorNoise {
  double drop_prob = 0.0;
  double confuse_prob = 0.0;
  void validate() const;
};

struct WorldConfig {
  int num_scenes = 125;
  double val_fraction = 0.2;
  int min_objects = 3;
  int max_objects = 6;
  int k_o = 8;
  int feature_dim = 64;
  double feature_noise = 0.1;
  // Additional questions per scene beyond one per templated category, drawn
  // with category_weights (uniform when empty).
  int extra_qa_per_scene = 0;
  std::vector<double> category_weights;
  // Questions pick their subject object with weight salience^focus_exponent.
  double focus_exponent = 3.0;
  CategoryTaxonomy taxonomy = CategoryTaxonomy::desk_default();
  DetectorNoise detector;

  void validate() const;
};

struct Dataset {
  WorldConfig config;
  std::uint64_t seed = 0;
  std::vector<Scene> scenes;
  std::vector<QAInstance> qa;

  const Scene* find_scene(std::string_view id) const;
  std::vector<const Scene*> scenes_in(Split s) const;
  std::vector<const QAInstance*> qa_in(Split s) const;
};

Dataset generate_dataset(const WorldConfig& config, std::uint64_t seed);

// Deterministic feature for a (label, color) pair with additive noise drawn from rng_seed.
std::vector<double> object_feature(std::string_view label, std::string_view color, int dim, double noise_sigma,
                                   std::uint64_t rng_seed);

struct ObjectDetection {
  Tokens labels;        // one per valid slot, ordered by bbox x1
  Matrix features;      // k_o x d_f, zero rows for padding
  Matrix boxes;         // k_o x 4, zero rows for padding
  std::vector<char> valid;  // k_o flags
  bool empty() const { return labels.empty(); }
  int count() const { return static_cast<int>(labels.size()); }
};

ObjectDetection detect_objects(const Scene& scene, const DetectorNoise& noise, std::uint64_t seed, int k_o);

// "a scene with a <color> <label> [and a <label>]"
Tokens caption_scene(const Scene& scene);

// Line-delimited JSON: manifest.json, scenes.jsonl, qa.jsonl.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);
// The three files concatenated; used for byte-level determinism checks.
std::string serialize_dataset(const Dataset& ds);

// Word-level vocabulary derived from the ontology and templates.
class Vocabulary {
 public:
  static const Vocabulary& standard();
  explicit Vocabulary(std::vector<std::string> words);

  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  int size() const { return static_cast<int>(words_.size()); }
  int id(std::string_view w) const;  // kUnk when absent
  bool contains(std::string_view w) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::vector<int> encode(const Tokens& toks) const;
  Tokens decode(const std::vector<int>& ids) const;  // stops at EOS, skips specials
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> words_;
};

std::string join(const Tokens& toks, std::string_view sep = " ");
Tokens split_ws(std::string_view text);

}  // namespace gvqg::world
