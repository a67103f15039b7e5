#pragma once
// Experiment configuration, example preparation, training with early stopping,
// checkpoint evaluation and the comparison matrix.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gvqg/concepts.hpp"
#include "gvqg/metrics.hpp"
#include "gvqg/models.hpp"
#include "gvqg/optim.hpp"
#include "gvqg/world.hpp"

namespace gvqg::harness {

using nlohmann::json;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// How guidance is formed when decoding an evaluation split.
//   none:      no guidance (baseline, implicit category-only)
//   filtered:  explicit, concepts filtered against the target QA
//   random:    explicit random concepts and category, or implicit random objects
//   gold:      implicit, gold object slots
//   predicted: implicit, internally sampled object slots
enum class EvalMode { none, filtered, random, gold, predicted };
std::string_view to_string(EvalMode m);
EvalMode parse_eval_mode(std::string_view s);
bool mode_valid_for(const models::ModelConfig& m, EvalMode mode);

struct WorldSpec {
  world::WorldConfig config;
  std::uint64_t seed = 7;
  std::uint64_t detector_seed = 11;
};

struct TrainSettings {
  int batch_size = 32;
  int max_steps = 5000;
  int eval_every = 250;
  int patience = 10;
  int eval_limit = 0;  // 0 evaluates every validation item during training
  std::uint64_t seed = 1;
  std::optional<EvalMode> early_stop_mode;  // defaults per variant
};

struct ExperimentConfig {
  std::string name = "run";
  WorldSpec world;
  models::ModelConfig model;
  nn::AdamConfig optim;
  TrainSettings train;
};

// JSON <-> config. Unknown keys are rejected; missing keys keep defaults.
ExperimentConfig experiment_from_json(const json& j);
json to_json(const ExperimentConfig& c);
json to_json(const models::ModelConfig& m);
models::ModelConfig model_from_json(const json& j, const models::ModelConfig& base);
WorldSpec world_from_json(const json& j);
json to_json(const WorldSpec& w);
std::uint64_t config_hash(const json& j);
EvalMode default_early_stop_mode(const models::ModelConfig& m);

// Everything derived from one QA pair. The guidance and gold slots emulate the
// actor and are computed here, outside any inference scope.
struct Example {
  std::string scene_id;
  std::string category;
  models::SceneInput input;
  concepts::ConceptSet candidates;
  world::Tokens filtered_concepts;  // top-k candidates vs the QA pair
  models::Targets targets;
  world::Tokens reference;          // question tokens
};

struct PreparedData {
  std::vector<Example> train;
  std::vector<Example> val;
  world::CategoryTaxonomy taxonomy = world::CategoryTaxonomy::desk_default();
  int k = 2;
};

PreparedData prepare(const world::Dataset& ds, const WorldSpec& spec, int k);

// Guidance for an explicit model from an example and its text input kind.
models::Guidance filtered_guidance(const Example& ex, models::TextInput input, const world::Vocabulary& vocab);
models::Guidance random_guidance(const Example& ex, models::TextInput input, const world::CategoryTaxonomy& tax,
                                 std::uint64_t seed, const world::Vocabulary& vocab);

struct GeneratedItem {
  std::string scene_id;
  world::Tokens question;
  world::Tokens reference;
  int predicted_category = -1;
  std::vector<int> predicted_slots;
  std::vector<int> gold_slots;
};

struct EvalResult {
  metrics::EvalReport report;
  std::vector<GeneratedItem> items;
};

EvalResult evaluate(const models::Model& model, std::span<const Example> examples, EvalMode mode,
                    std::uint64_t seed, std::size_t limit = 0);

struct StepRecord {
  int step = 0;
  double total = 0.0;
  double question_nll = 0.0;
  double category_ce = 0.0;
  double start_end = 0.0;
  double kl = 0.0;
  double grad_norm = 0.0;
};

struct EvalRecord {
  int step = 0;
  double bleu4 = 0.0;
  double val_nll = 0.0;
};

struct RunRecord {
  std::string name;
  std::uint64_t config_hash = 0;
  std::string status = "ok";  // ok | nan | error
  std::string message;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  int best_step = 0;
  double best_bleu4 = -1.0;
  std::string checkpoint;
  double wall_seconds = 0.0;
};

json to_json(const RunRecord& r);
json to_json(const metrics::EvalReport& r);

struct TrainHooks {
  // Replaces the model after construction (tests inject frozen models).
  std::function<void(models::Model&)> after_init;
  // When false, parameters are never updated.
  bool update = true;
};

struct TrainResult {
  RunRecord record;
  std::unique_ptr<models::Model> model;  // best parameters restored
};

TrainResult train(const ExperimentConfig& cfg, const PreparedData& data, const TrainHooks& hooks = {});

// Mean teacher-forced question NLL over examples (explicit guidance filtered, implicit gold).
double validation_nll(const models::Model& model, std::span<const Example> examples, std::size_t limit = 0);

// Versioned binary container of named tensors plus the model config.
void save_checkpoint(const std::filesystem::path& path, models::Model& model, const json& extra = json::object());
struct LoadedCheckpoint {
  std::unique_ptr<models::Model> model;
  json extra;
  std::uint64_t config_hash = 0;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Experiment matrix.
struct TrainingSpec {
  std::string name;
  models::ModelConfig model;
};

struct EvalRow {
  std::string label;
  std::string training;  // TrainingSpec name
  EvalMode mode = EvalMode::none;
};

struct MatrixConfig {
  WorldSpec world;
  models::ModelConfig base_model;
  nn::AdamConfig optim;
  TrainSettings train;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<TrainingSpec> trainings;
  std::vector<EvalRow> rows;
  std::size_t eval_limit = 0;  // 0 evaluates all validation items

  static MatrixConfig desk_default();
};

MatrixConfig matrix_from_json(const json& j);
json to_json(const MatrixConfig& m);

struct RowResult {
  EvalRow row;
  std::vector<metrics::EvalReport> per_seed;
  metrics::EvalReport median;
  std::vector<std::string> errors;
};

struct MatrixResult {
  std::vector<RowResult> rows;
  std::vector<RunRecord> runs;
  double wall_seconds = 0.0;
  std::uint64_t realism_violations = 0;
  std::uint64_t inference_scopes = 0;
  // Empirical overlap of uniformly random slot choices on the validation split.
  double random_overlap = 0.0;
  double analytic_random_overlap = 0.0;

  const RowResult* find(std::string_view label) const;
};

using ProgressFn = std::function<void(const std::string&)>;
MatrixResult run_matrix(const MatrixConfig& cfg, const std::filesystem::path& out_dir = {},
                        const ProgressFn& progress = {});
json to_json(const MatrixResult& m);
std::string format_table(const MatrixResult& m);

// Median of each metric across reports.
metrics::EvalReport median_report(const std::vector<metrics::EvalReport>& reports);

json read_json_file(const std::filesystem::path& p);
void write_json_file(const std::filesystem::path& p, const json& j);

}  // namespace gvqg::harness
