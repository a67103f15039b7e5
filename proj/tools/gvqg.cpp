#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gvqg/concepts.hpp"
#include "gvqg/harness.hpp"
#include "gvqg/metrics.hpp"
#include "gvqg/service.hpp"

using namespace gvqg;
using harness::json;
namespace fs = std::filesystem;

namespace {

std::vector<metrics::Sentence> read_sentences(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::vector<metrics::Sentence> out;
  for (std::string line; std::getline(in, line);) {
    std::istringstream words(line);
    metrics::Sentence s;
    for (std::string w; words >> w;) s.push_back(w);
    out.push_back(std::move(s));
  }
  return out;
}

harness::ExperimentConfig load_experiment(const std::string& path) {
  return path.empty() ? harness::experiment_from_json(json::object())
                      : harness::experiment_from_json(harness::read_json_file(path));
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

int run_worldgen(const std::string& config, const fs::path& out) {
  const auto cfg = load_experiment(config);
  const auto ds = world::generate_dataset(cfg.world.config, cfg.world.seed);
  world::write_dataset(ds, out);
  std::cerr << "wrote " << ds.scenes.size() << " scenes, " << ds.qa.size() << " questions to " << out << "\n";
  return 0;
}

int run_train(const std::string& config, const fs::path& out) {
  const auto cfg = load_experiment(config);
  const auto ds = world::generate_dataset(cfg.world.config, cfg.world.seed);
  const auto data = harness::prepare(ds, cfg.world, cfg.model.k);
  auto result = harness::train(cfg, data);
  fs::create_directories(out);
  result.record.checkpoint = "best.ckpt";
  if (result.model)
    harness::save_checkpoint(out / "best.ckpt", *result.model, json{{"name", cfg.name}, {"world", harness::to_json(cfg.world)}});
  harness::write_json_file(out / "config.json", harness::to_json(cfg));
  harness::write_json_file(out / "run.json", harness::to_json(result.record));
  harness::write_json_file(out / "manifest.json",
                           json{{"config", "config.json"},
                                {"world", harness::to_json(cfg.world)},
                                {"variants", json::array({{{"name", cfg.name}, {"checkpoint", "best.ckpt"}}})}});
  std::cout << result.record.status << " best BLEU-4 " << result.record.best_bleu4 * 100.0 << " at step "
            << result.record.best_step << "\n";
  return result.record.status == "ok" ? 0 : 1;
}

int run_evaluate(const std::string& candidates, const std::string& references, const std::string& checkpoint,
                 const std::string& config, const std::string& split, const std::string& mode, std::uint64_t seed,
                 std::size_t limit) {
  if (!candidates.empty() || !references.empty()) {
    if (candidates.empty() || references.empty())
      throw std::invalid_argument("--candidates and --references go together");
    const auto cand = read_sentences(candidates);
    const auto ref = read_sentences(references);
    if (cand.size() != ref.size())
      throw std::invalid_argument("candidate and reference line counts differ: " + std::to_string(cand.size()) +
                                  " vs " + std::to_string(ref.size()));
    metrics::Corpus corpus;
    for (std::size_t i = 0; i < cand.size(); ++i) corpus.push_back({cand[i], ref[i]});
    print(harness::to_json(metrics::evaluate_corpus(corpus)));
    return 0;
  }
  if (checkpoint.empty()) throw std::invalid_argument("need --checkpoint or --candidates/--references");
  auto loaded = harness::load_checkpoint(checkpoint);
  harness::WorldSpec spec = config.empty() && loaded.extra.contains("world")
                                ? harness::world_from_json(loaded.extra.at("world"))
                                : load_experiment(config).world;
  const auto& model = *loaded.model;
  const auto eval_mode =
      mode.empty() ? harness::default_early_stop_mode(model.config()) : harness::parse_eval_mode(mode);
  if (!harness::mode_valid_for(model.config(), eval_mode))
    throw std::invalid_argument("mode '" + mode + "' is not valid for this checkpoint");
  const auto data = harness::prepare(world::generate_dataset(spec.config, spec.seed), spec, model.config().k);
  if (split != "val" && split != "train") throw std::invalid_argument("split must be train or val");
  const auto& examples = split == "val" ? data.val : data.train;
  const auto result = harness::evaluate(model, examples, eval_mode, seed, limit);
  json j = harness::to_json(result.report);
  j["mode"] = harness::to_string(eval_mode);
  j["split"] = split;
  print(j);
  return 0;
}

int run_matrix(const std::string& config, const fs::path& out, int seeds) {
  auto cfg = harness::matrix_from_json(config.empty() ? json::object() : harness::read_json_file(config));
  if (seeds > 0) cfg.seeds.resize(std::min<std::size_t>(cfg.seeds.size(), static_cast<std::size_t>(seeds)));
  const auto result = harness::run_matrix(cfg, out, [](const std::string& s) { std::cerr << s << "\n"; });
  std::cout << harness::format_table(result);
  std::cout << "wall " << result.wall_seconds << " s, realism violations " << result.realism_violations << "\n";
  return 0;
}

int run_concepts(const std::string& config, const std::string& dataset, const std::string& scene_id, int k) {
  world::Dataset ds;
  harness::WorldSpec spec = load_experiment(config).world;
  if (!dataset.empty()) {
    ds = world::read_dataset(dataset);
    spec.config = ds.config;
  } else {
    ds = world::generate_dataset(spec.config, spec.seed);
  }
  const world::Scene* scene = ds.find_scene(scene_id);
  if (scene == nullptr) throw std::invalid_argument("unknown scene " + scene_id);
  const auto det = world::detect_objects(*scene, spec.config.detector, spec.detector_seed, spec.config.k_o);
  const auto caption = world::caption_scene(*scene);
  const auto candidates = concepts::build_candidate_concepts(det.labels, caption);
  json cands = json::array();
  for (std::size_t i = 0; i < candidates.size(); ++i)
    cands.push_back({{"token", candidates.tokens[i]},
                     {"provenance", candidates.provenance[i] == concepts::Provenance::object ? "object" : "caption"}});
  json questions = json::array();
  for (const auto& qa : ds.qa) {
    if (qa.scene_id() != scene_id) continue;
    world::Tokens joined = qa.question();
    joined.insert(joined.end(), qa.answer().begin(), qa.answer().end());
    const auto qa_tokens = concepts::prepare_qa_tokens(joined);
    const auto sel = concepts::filter_concepts(candidates, qa_tokens, k, concepts::TokenEmbedder::standard(), qa.category());
    const auto gold = concepts::gold_objects_for_implicit(det.labels, qa_tokens, k, concepts::TokenEmbedder::standard());
    questions.push_back({{"question", qa.question()},
                         {"answer", qa.answer()},
                         {"category", qa.category()},
                         {"filtered", sel.concepts},
                         {"gold_slots", gold}});
  }
  print({{"scene_id", scene_id}, {"detected", det.labels}, {"caption", caption}, {"candidates", cands},
         {"questions", questions}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided visual question generation on synthetic desk scenes"};
  app.require_subcommand(1);

  std::string config;
  fs::path out;
  auto* worldgen = app.add_subcommand("worldgen", "Generate a dataset directory");
  worldgen->add_option("--config", config, "Experiment config (world section is used)");
  worldgen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one model into a run directory");
  train->add_option("--config", config, "Experiment config");
  train->add_option("--out", out, "Run directory")->required();

  std::string candidates, references, checkpoint, split = "val", mode;
  std::uint64_t seed = 1;
  std::size_t limit = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Score sentence files or a checkpoint");
  evaluate->add_option("--candidates", candidates, "One tokenized candidate per line");
  evaluate->add_option("--references", references, "One tokenized reference per line");
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint to decode with");
  evaluate->add_option("--config", config, "Experiment config supplying the world");
  evaluate->add_option("--split", split, "train or val");
  evaluate->add_option("--mode", mode, "none, filtered, random, gold or predicted");
  evaluate->add_option("--seed", seed, "Seed for random guidance");
  evaluate->add_option("--limit", limit, "Evaluate at most this many examples");

  int seeds = 0;
  auto* matrix = app.add_subcommand("matrix", "Run the experiment matrix");
  matrix->add_option("--config", config, "Matrix config");
  matrix->add_option("--out", out, "Output directory")->required();
  matrix->add_option("--seeds", seeds, "Use only the first N seeds");

  std::string dataset, scene_id;
  int k = 2;
  auto* concepts_cmd = app.add_subcommand("concepts", "Dump candidate and filtered concepts for a scene");
  concepts_cmd->add_option("--config", config, "Experiment config supplying the world");
  concepts_cmd->add_option("--dataset", dataset, "Dataset directory instead of a generated world");
  concepts_cmd->add_option("--scene", scene_id, "Scene id")->required();
  concepts_cmd->add_option("-k", k, "Concepts per question");

  std::string manifest, host = "127.0.0.1", static_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve the inference API");
  serve->add_option("--manifest", manifest, "Run manifest listing checkpoints")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--static", static_dir, "Directory served under /ui");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*worldgen) return run_worldgen(config, out);
    if (*train) return run_train(config, out);
    if (*evaluate) return run_evaluate(candidates, references, checkpoint, config, split, mode, seed, limit);
    if (*matrix) return run_matrix(config, out, seeds);
    if (*concepts_cmd) return run_concepts(config, dataset, scene_id, k);
    if (*serve) {
      const auto svc = service::GuidanceService::from_manifest(manifest);
      std::cerr << "serving " << svc.dataset().scenes.size() << " scenes on " << host << ":" << port << "\n";
      service::serve(svc, host, port, static_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
