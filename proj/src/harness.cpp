#include "gvqg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "gvqg/hash.hpp"
#include "gvqg/realism.hpp"

namespace gvqg::harness {

// ---------------------------------------------------------------------------
// Modes

std::string_view to_string(EvalMode m) {
  switch (m) {
    case EvalMode::none: return "none";
    case EvalMode::filtered: return "filtered";
    case EvalMode::random: return "random";
    case EvalMode::gold: return "gold";
    case EvalMode::predicted: return "predicted";
  }
  return "?";
}

EvalMode parse_eval_mode(std::string_view s) {
  for (auto m : {EvalMode::none, EvalMode::filtered, EvalMode::random, EvalMode::gold, EvalMode::predicted})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown eval mode '" + std::string(s) + "'");
}

bool mode_valid_for(const models::ModelConfig& m, EvalMode mode) {
  using models::Variant;
  switch (m.variant) {
    case Variant::baseline: return mode == EvalMode::none;
    case Variant::explicit_guided: return mode == EvalMode::filtered || mode == EvalMode::random;
    case Variant::implicit:
      if (m.category_only) return mode == EvalMode::none;
      return mode == EvalMode::gold || mode == EvalMode::predicted || mode == EvalMode::random;
    case Variant::variational:
      return mode == EvalMode::gold || mode == EvalMode::predicted || mode == EvalMode::random;
  }
  return false;
}

EvalMode default_early_stop_mode(const models::ModelConfig& m) {
  switch (m.variant) {
    case models::Variant::baseline: return EvalMode::none;
    case models::Variant::explicit_guided: return EvalMode::filtered;
    default: return m.category_only ? EvalMode::none : EvalMode::gold;
  }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace

json to_json(const WorldSpec& w) {
  const auto& c = w.config;
  return json{{"num_scenes", c.num_scenes},
              {"val_fraction", c.val_fraction},
              {"min_objects", c.min_objects},
              {"max_objects", c.max_objects},
              {"k_o", c.k_o},
              {"feature_dim", c.feature_dim},
              {"feature_noise", c.feature_noise},
              {"extra_qa_per_scene", c.extra_qa_per_scene},
              {"focus_exponent", c.focus_exponent},
              {"category_weights", c.category_weights},
              {"categories", c.taxonomy.names()},
              {"detector", {{"drop_prob", c.detector.drop_prob}, {"confuse_prob", c.detector.confuse_prob}}},
              {"seed", w.seed},
              {"detector_seed", w.detector_seed}};
}

WorldSpec world_from_json(const json& j) {
  check_keys(j, {"num_scenes", "val_fraction", "min_objects", "max_objects", "k_o", "feature_dim", "feature_noise",
                 "extra_qa_per_scene", "focus_exponent", "category_weights", "categories", "detector", "seed", "detector_seed"},
             "world");
  WorldSpec w;
  auto& c = w.config;
  read(j, "num_scenes", c.num_scenes);
  read(j, "val_fraction", c.val_fraction);
  read(j, "min_objects", c.min_objects);
  read(j, "max_objects", c.max_objects);
  read(j, "k_o", c.k_o);
  read(j, "feature_dim", c.feature_dim);
  read(j, "feature_noise", c.feature_noise);
  read(j, "extra_qa_per_scene", c.extra_qa_per_scene);
  read(j, "focus_exponent", c.focus_exponent);
  read(j, "category_weights", c.category_weights);
  if (j.contains("categories")) c.taxonomy = world::CategoryTaxonomy(j.at("categories").get<std::vector<std::string>>());
  if (j.contains("detector")) {
    const json& d = j.at("detector");
    check_keys(d, {"drop_prob", "confuse_prob"}, "world.detector");
    read(d, "drop_prob", c.detector.drop_prob);
    read(d, "confuse_prob", c.detector.confuse_prob);
  }
  read(j, "seed", w.seed);
  read(j, "detector_seed", w.detector_seed);
  c.validate();
  return w;
}

json to_json(const models::ModelConfig& m) {
  const auto& c = m.core;
  return json{{"variant", models::to_string(m.variant)},
              {"text_input", models::to_string(m.text_input)},
              {"category_only", m.category_only},
              {"vocab_size", c.vocab_size},
              {"d_model", c.d_model},
              {"heads", c.heads},
              {"ffn_dim", c.ffn_dim},
              {"text_layers", c.text_layers},
              {"image_layers", c.image_layers},
              {"decoder_layers", c.decoder_layers},
              {"feature_dim", c.feature_dim},
              {"max_len", c.max_len},
              {"init_std", c.init_std},
              {"num_categories", m.num_categories},
              {"k", m.k},
              {"head_hidden", m.head_hidden},
              {"variational_layers", m.variational_layers},
              {"tau", m.gumbel.tau},
              {"tau_anneal", m.gumbel.anneal},
              {"kl_weight", m.kl_weight},
              {"gold_recon", m.gold_recon}};
}

models::ModelConfig model_from_json(const json& j, const models::ModelConfig& base) {
  check_keys(j, {"variant", "text_input", "category_only", "vocab_size", "d_model", "heads", "ffn_dim", "text_layers",
                 "image_layers", "decoder_layers", "feature_dim", "max_len", "init_std", "num_categories", "k",
                 "head_hidden", "variational_layers", "tau", "tau_anneal", "kl_weight", "gold_recon"},
             "model");
  models::ModelConfig m = base;
  if (j.contains("variant")) {
    auto v = models::parse_variant(j.at("variant").get<std::string>());
    if (!v) throw ConfigError("model: unknown variant '" + j.at("variant").get<std::string>() + "'");
    m.variant = *v;
  }
  if (j.contains("text_input")) {
    auto t = models::parse_text_input(j.at("text_input").get<std::string>());
    if (!t) throw ConfigError("model: unknown text_input '" + j.at("text_input").get<std::string>() + "'");
    m.text_input = *t;
  }
  auto& c = m.core;
  read(j, "category_only", m.category_only);
  read(j, "vocab_size", c.vocab_size);
  read(j, "d_model", c.d_model);
  read(j, "heads", c.heads);
  read(j, "ffn_dim", c.ffn_dim);
  read(j, "text_layers", c.text_layers);
  read(j, "image_layers", c.image_layers);
  read(j, "decoder_layers", c.decoder_layers);
  read(j, "feature_dim", c.feature_dim);
  read(j, "max_len", c.max_len);
  read(j, "init_std", c.init_std);
  read(j, "num_categories", m.num_categories);
  read(j, "k", m.k);
  read(j, "head_hidden", m.head_hidden);
  read(j, "variational_layers", m.variational_layers);
  read(j, "tau", m.gumbel.tau);
  read(j, "tau_anneal", m.gumbel.anneal);
  read(j, "kl_weight", m.kl_weight);
  read(j, "gold_recon", m.gold_recon);
  return m;
}

namespace {

json optim_to_json(const nn::AdamConfig& o) {
  return json{{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}, {"clip_norm", o.clip_norm}};
}

nn::AdamConfig optim_from_json(const json& j, nn::AdamConfig o) {
  check_keys(j, {"lr", "beta1", "beta2", "eps", "clip_norm"}, "optim");
  read(j, "lr", o.lr);
  read(j, "beta1", o.beta1);
  read(j, "beta2", o.beta2);
  read(j, "eps", o.eps);
  read(j, "clip_norm", o.clip_norm);
  if (!(o.lr > 0.0)) throw ConfigError("optim: lr must be positive");
  return o;
}

json train_to_json(const TrainSettings& t) {
  json j{{"batch_size", t.batch_size}, {"max_steps", t.max_steps}, {"eval_every", t.eval_every},
         {"patience", t.patience},     {"eval_limit", t.eval_limit}, {"seed", t.seed}};
  if (t.early_stop_mode) j["early_stop_mode"] = to_string(*t.early_stop_mode);
  return j;
}

TrainSettings train_from_json(const json& j, TrainSettings t) {
  check_keys(j, {"batch_size", "max_steps", "eval_every", "patience", "eval_limit", "seed", "early_stop_mode"}, "train");
  read(j, "batch_size", t.batch_size);
  read(j, "max_steps", t.max_steps);
  read(j, "eval_every", t.eval_every);
  read(j, "patience", t.patience);
  read(j, "eval_limit", t.eval_limit);
  read(j, "seed", t.seed);
  if (j.contains("early_stop_mode")) t.early_stop_mode = parse_eval_mode(j.at("early_stop_mode").get<std::string>());
  if (t.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (t.max_steps < 1) throw ConfigError("train: max_steps must be >= 1");
  if (t.eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
  if (t.patience < 1) throw ConfigError("train: patience must be >= 1");
  return t;
}

// Fields derived from the world and vocabulary rather than configured.
void derive_model_fields(models::ModelConfig& m, const WorldSpec& w) {
  m.core.vocab_size = world::Vocabulary::standard().size();
  m.core.feature_dim = w.config.feature_dim;
  m.num_categories = w.config.taxonomy.size();
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
  check_keys(j, {"name", "world", "model", "optim", "train"}, "experiment");
  ExperimentConfig c;
  read(j, "name", c.name);
  if (j.contains("world")) c.world = world_from_json(j.at("world"));
  if (j.contains("model")) c.model = model_from_json(j.at("model"), c.model);
  if (j.contains("optim")) c.optim = optim_from_json(j.at("optim"), c.optim);
  if (j.contains("train")) c.train = train_from_json(j.at("train"), c.train);
  derive_model_fields(c.model, c.world);
  c.model.validate();
  if (c.train.early_stop_mode && !mode_valid_for(c.model, *c.train.early_stop_mode))
    throw ConfigError("train: early_stop_mode '" + std::string(to_string(*c.train.early_stop_mode)) +
                      "' is not valid for this variant");
  return c;
}

json to_json(const ExperimentConfig& c) {
  return json{{"name", c.name},
              {"world", to_json(c.world)},
              {"model", to_json(c.model)},
              {"optim", optim_to_json(c.optim)},
              {"train", train_to_json(c.train)}};
}

std::uint64_t config_hash(const json& j) { return fnv1a64(j.dump()); }

json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& p, const json& j) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Examples

PreparedData prepare(const world::Dataset& ds, const WorldSpec& spec, int k) {
  PreparedData data;
  data.taxonomy = spec.config.taxonomy;
  data.k = k;
  const auto& vocab = world::Vocabulary::standard();
  const auto& embedder = concepts::TokenEmbedder::standard();
  for (auto split : {world::Split::train, world::Split::val}) {
    auto& out = split == world::Split::train ? data.train : data.val;
    for (const world::QAInstance* qa : ds.qa_in(split)) {
      const world::Scene* scene = ds.find_scene(qa->scene_id());
      const auto det = world::detect_objects(*scene, spec.config.detector, spec.detector_seed, spec.config.k_o);
      if (det.empty()) continue;
      Example ex;
      ex.scene_id = scene->scene_id;
      ex.category = qa->category();
      ex.input = models::make_scene_input(det, vocab);
      ex.candidates = concepts::build_candidate_concepts(det.labels, world::caption_scene(*scene));
      const auto qa_tokens = concepts::prepare_qa_tokens(qa->qa_tokens());
      ex.filtered_concepts = concepts::filter_concepts(ex.candidates, qa_tokens, k, embedder).concepts;
      ex.targets.question = vocab.encode(qa->question());
      ex.targets.category = data.taxonomy.index(qa->category());
      ex.targets.gold_slots = concepts::gold_objects_for_implicit(det.labels, qa_tokens, k, embedder);
      ex.targets.qa = vocab.encode(qa->qa_tokens());
      ex.reference = qa->question();
      out.push_back(std::move(ex));
    }
  }
  return data;
}

models::Guidance filtered_guidance(const Example& ex, models::TextInput input, const world::Vocabulary& vocab) {
  models::Guidance g;
  if (input != models::TextInput::category) g.concept_ids = vocab.encode(ex.filtered_concepts);
  if (input != models::TextInput::objects) g.category_token = vocab.id(ex.category);
  return g;
}

models::Guidance random_guidance(const Example& ex, models::TextInput input, const world::CategoryTaxonomy& tax,
                                 std::uint64_t seed, const world::Vocabulary& vocab) {
  const auto sel = concepts::random_selection(ex.candidates, static_cast<int>(std::max<std::size_t>(
                                                                  1, ex.filtered_concepts.size())),
                                              tax, seed);
  models::Guidance g;
  if (input != models::TextInput::category) g.concept_ids = vocab.encode(sel.concepts);
  if (input != models::TextInput::objects) g.category_token = vocab.id(sel.category);
  return g;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(const models::Model& model, std::span<const Example> examples, EvalMode mode, std::uint64_t seed,
                    std::size_t limit) {
  const auto& mc = model.config();
  if (!mode_valid_for(mc, mode))
    throw ConfigError("eval mode '" + std::string(to_string(mode)) + "' is not valid for variant '" +
                      std::string(models::to_string(mc.variant)) + "'");
  const auto& vocab = world::Vocabulary::standard();
  const world::CategoryTaxonomy tax = world::CategoryTaxonomy::desk_default();
  const std::size_t n = limit == 0 ? examples.size() : std::min(limit, examples.size());
  EvalResult res;
  metrics::Corpus corpus;
  std::vector<std::vector<int>> pred_slots;
  std::vector<std::vector<int>> gold_slots;
  for (std::size_t i = 0; i < n; ++i) {
    const Example& ex = examples[i];
    const std::uint64_t item_seed = derive_seed(seed, ex.scene_id + "/" + std::to_string(i));
    models::GenerateOptions opts;
    opts.seed = item_seed;
    opts.decode.max_len = mc.core.max_len;
    models::GenerationOutput out;
    if (mc.variant == models::Variant::explicit_guided) {
      const auto g = mode == EvalMode::random
                         ? random_guidance(ex, mc.text_input, world::CategoryTaxonomy(tax), item_seed, vocab)
                         : filtered_guidance(ex, mc.text_input, vocab);
      out = model.generate(ex.input, &g, opts);
    } else {
      if (mode == EvalMode::gold) opts.mask_mode = sampling::MaskMode::gold;
      if (mode == EvalMode::random) opts.mask_mode = sampling::MaskMode::random;
      if (mode == EvalMode::predicted) opts.mask_mode = sampling::MaskMode::predicted;
      opts.gold_slots = ex.targets.gold_slots;
      out = model.generate(ex.input, nullptr, opts);
    }
    GeneratedItem item;
    item.scene_id = ex.scene_id;
    item.question = vocab.decode(out.question);
    item.reference = ex.reference;
    item.predicted_category = out.category;
    if (out.has_mask) item.predicted_slots = out.mask.indices();
    item.gold_slots = ex.targets.gold_slots;
    corpus.push_back({item.question, item.reference});
    if (out.has_mask && !mc.category_only) {
      pred_slots.push_back(item.predicted_slots);
      gold_slots.push_back(item.gold_slots);
    }
    res.items.push_back(std::move(item));
  }
  res.report = metrics::evaluate_corpus(corpus);
  if (!pred_slots.empty()) res.report.overlap_accuracy = metrics::overlap_accuracy(pred_slots, gold_slots, mc.k);
  return res;
}

double validation_nll(const models::Model& model, std::span<const Example> examples, std::size_t limit) {
  const auto& vocab = world::Vocabulary::standard();
  const std::size_t n = limit == 0 ? examples.size() : std::min(limit, examples.size());
  if (n == 0) throw std::invalid_argument("validation_nll: no examples");
  std::mt19937_64 rng(12345);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    nn::Graph g(false);
    const Example& ex = examples[i];
    models::Guidance guide;
    if (model.variant() == models::Variant::explicit_guided)
      guide = filtered_guidance(ex, model.config().text_input, vocab);
    sum += model.loss(g, ex.input, &guide, ex.targets, rng).question_nll;
  }
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<Matrix> snapshot(const nn::NamedParams& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const auto& [name, p] : params) out.push_back(p->value);
  return out;
}

void restore(const nn::NamedParams& params, const std::vector<Matrix>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].second->value = values[i];
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const PreparedData& data, const TrainHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  if (data.train.empty() || data.val.empty()) throw std::invalid_argument("train: empty train or validation split");
  TrainResult res;
  RunRecord& rec = res.record;
  rec.name = cfg.name;
  rec.config_hash = config_hash(to_json(cfg));

  auto model = std::make_unique<models::Model>(cfg.model, derive_seed(cfg.train.seed, "init/" + cfg.name));
  if (hooks.after_init) hooks.after_init(*model);
  const nn::NamedParams params = model->named_parameters();
  nn::Adam adam(params, cfg.optim);
  const EvalMode stop_mode = cfg.train.early_stop_mode.value_or(default_early_stop_mode(cfg.model));
  const auto& vocab = world::Vocabulary::standard();

  std::mt19937_64 rng(derive_seed(cfg.train.seed, "train/" + cfg.name));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  std::vector<Matrix> best = snapshot(params);
  int since_best = 0;
  const double inv_batch = 1.0 / cfg.train.batch_size;

  auto run_eval = [&](int step) {
    EvalRecord e;
    e.step = step;
    e.bleu4 = evaluate(*model, data.val, stop_mode, derive_seed(cfg.train.seed, "eval"),
                       static_cast<std::size_t>(cfg.train.eval_limit))
                  .report.bleu4();
    e.val_nll = validation_nll(*model, data.val, static_cast<std::size_t>(cfg.train.eval_limit));
    rec.evals.push_back(e);
    if (e.bleu4 > rec.best_bleu4) {
      rec.best_bleu4 = e.bleu4;
      rec.best_step = step;
      best = snapshot(params);
      since_best = 0;
    } else {
      ++since_best;
    }
    return since_best >= cfg.train.patience;
  };

  bool stop = false;
  for (int step = 1; step <= cfg.train.max_steps && !stop; ++step) {
    StepRecord sr;
    sr.step = step;
    for (int b = 0; b < cfg.train.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Example& ex = data.train[order[cursor++]];
      nn::Graph g(hooks.update);
      models::Guidance guide;
      if (cfg.model.variant == models::Variant::explicit_guided)
        guide = filtered_guidance(ex, cfg.model.text_input, vocab);
      const models::LossTerms lt = model->loss(g, ex.input, &guide, ex.targets, rng);
      const double total = g.scalar(lt.total);
      if (!std::isfinite(total)) {
        rec.status = "nan";
        rec.message = "non-finite loss at step " + std::to_string(step) + " on scene " + ex.scene_id +
                      " (nll " + std::to_string(lt.question_nll) + ", category " + std::to_string(lt.category_ce) +
                      ", start_end " + std::to_string(lt.start_end) + ", kl " + std::to_string(lt.kl) + ")";
        stop = true;
        break;
      }
      sr.total += total * inv_batch;
      sr.question_nll += lt.question_nll * inv_batch;
      sr.category_ce += lt.category_ce * inv_batch;
      sr.start_end += lt.start_end * inv_batch;
      sr.kl += lt.kl * inv_batch;
      if (hooks.update) g.backward(g.scale(lt.total, inv_batch));
    }
    if (stop) break;
    if (hooks.update) sr.grad_norm = adam.step();
    rec.steps.push_back(sr);
    if (step % cfg.train.eval_every == 0 || step == cfg.train.max_steps) stop = run_eval(step);
  }
  restore(params, best);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.model = std::move(model);
  return res;
}

json to_json(const metrics::EvalReport& r) {
  json j{{"bleu_1", r.bleu[0]}, {"bleu_2", r.bleu[1]}, {"bleu_3", r.bleu[2]}, {"bleu_4", r.bleu[3]},
         {"rouge_l", r.rouge_l}, {"cider", r.cider},    {"cider_x10", 10.0 * r.cider}, {"meteor", r.meteor},
         {"msj_3", r.msj[0]},   {"msj_4", r.msj[1]},   {"msj_5", r.msj[2]},    {"items", r.items}};
  j["overlap_accuracy"] = r.overlap_accuracy ? json(*r.overlap_accuracy) : json(nullptr);
  return j;
}

json to_json(const RunRecord& r) {
  json steps = json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"step", s.step}, {"total", s.total}, {"question_nll", s.question_nll},
                     {"category_ce", s.category_ce}, {"start_end", s.start_end}, {"kl", s.kl},
                     {"grad_norm", s.grad_norm}});
  json evals = json::array();
  for (const auto& e : r.evals) evals.push_back({{"step", e.step}, {"bleu_4", e.bleu4}, {"val_nll", e.val_nll}});
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(r.config_hash));
  return json{{"name", r.name},         {"config_hash", hash},       {"status", r.status},
              {"message", r.message},   {"steps", steps},            {"evals", evals},
              {"best_step", r.best_step}, {"best_bleu_4", r.best_bleu4}, {"checkpoint", r.checkpoint},
              {"wall_seconds", r.wall_seconds}};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'G', 'V', 'Q', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 26)) throw CheckpointError("checkpoint string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw CheckpointError("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, models::Model& model, const json& extra) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const json cfg = to_json(model.config());
  out.write(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put_string(out, std::string(models::to_string(model.variant())));
  put_string(out, cfg.dump());
  put(out, config_hash(cfg));
  put(out, world::Vocabulary::standard().fingerprint());
  put_string(out, extra.dump());
  const auto params = model.named_parameters();
  put(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put_string(out, name);
    put(out, static_cast<std::int32_t>(p->value.rows()));
    put(out, static_cast<std::int32_t>(p->value.cols()));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::string variant = get_string(in);
  const json cfg_json = json::parse(get_string(in));
  const auto hash = get<std::uint64_t>(in);
  if (hash != config_hash(cfg_json)) throw CheckpointError("checkpoint config hash mismatch");
  if (get<std::uint64_t>(in) != world::Vocabulary::standard().fingerprint())
    throw CheckpointError("checkpoint was written with a different vocabulary");
  LoadedCheckpoint lc;
  lc.extra = json::parse(get_string(in));
  lc.config_hash = hash;
  const models::ModelConfig mc = model_from_json(cfg_json, models::ModelConfig{});
  if (models::to_string(mc.variant) != variant) throw CheckpointError("checkpoint variant tag mismatch");
  lc.model = std::make_unique<models::Model>(mc, 0);
  const auto params = lc.model->named_parameters();
  const auto count = get<std::uint32_t>(in);
  if (count != params.size())
    throw CheckpointError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(params.size()));
  for (const auto& [name, p] : params) {
    const std::string stored = get_string(in);
    if (stored != name) throw CheckpointError("checkpoint tensor '" + stored + "' where '" + name + "' expected");
    const auto rows = get<std::int32_t>(in);
    const auto cols = get<std::int32_t>(in);
    if (rows != p->value.rows() || cols != p->value.cols())
      throw CheckpointError("shape mismatch for '" + name + "': stored " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", expected " + p->value.shape_str());
    in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint truncated in '" + name + "'");
  }
  return lc;
}

// ---------------------------------------------------------------------------
// Matrix

MatrixConfig MatrixConfig::desk_default() {
  using models::TextInput;
  using models::Variant;
  MatrixConfig m;
  auto spec = [&](std::string name, Variant v, TextInput t, bool cat_only) {
    TrainingSpec s;
    s.name = std::move(name);
    s.model = m.base_model;
    s.model.variant = v;
    s.model.text_input = t;
    s.model.category_only = cat_only;
    m.trainings.push_back(std::move(s));
  };
  spec("baseline", Variant::baseline, TextInput::guided, false);
  spec("explicit-category", Variant::explicit_guided, TextInput::category, false);
  spec("explicit-objects", Variant::explicit_guided, TextInput::objects, false);
  spec("explicit-guided", Variant::explicit_guided, TextInput::guided, false);
  spec("implicit-category", Variant::implicit, TextInput::guided, true);
  spec("implicit", Variant::implicit, TextInput::guided, false);
  spec("variational", Variant::variational, TextInput::guided, false);
  m.rows = {
      {"image-only", "baseline", EvalMode::none},
      {"explicit/image-category", "explicit-category", EvalMode::filtered},
      {"explicit/image-objects", "explicit-objects", EvalMode::filtered},
      {"explicit/image-guided", "explicit-guided", EvalMode::filtered},
      {"explicit/image-guided-random", "explicit-guided", EvalMode::random},
      {"implicit/image-category", "implicit-category", EvalMode::none},
      {"implicit/image-guided", "implicit", EvalMode::gold},
      {"implicit/image-guided-pred", "implicit", EvalMode::predicted},
      {"implicit/image-guided-random", "implicit", EvalMode::random},
      {"variational/image-guided", "variational", EvalMode::gold},
      {"variational/image-guided-pred", "variational", EvalMode::predicted},
      {"variational/image-guided-random", "variational", EvalMode::random},
  };
  return m;
}

MatrixConfig matrix_from_json(const json& j) {
  check_keys(j, {"world", "model", "optim", "train", "seeds", "trainings", "rows", "eval_limit"}, "matrix");
  MatrixConfig base = MatrixConfig::desk_default();
  MatrixConfig m;
  if (j.contains("world")) m.world = world_from_json(j.at("world"));
  if (j.contains("model")) m.base_model = model_from_json(j.at("model"), m.base_model);
  if (j.contains("optim")) m.optim = optim_from_json(j.at("optim"), m.optim);
  if (j.contains("train")) m.train = train_from_json(j.at("train"), m.train);
  read(j, "seeds", m.seeds);
  read(j, "eval_limit", m.eval_limit);
  derive_model_fields(m.base_model, m.world);
  if (m.seeds.empty()) throw ConfigError("matrix: at least one seed required");

  if (j.contains("trainings")) {
    for (const auto& t : j.at("trainings")) {
      check_keys(t, {"name", "model"}, "matrix.trainings[]");
      TrainingSpec s;
      s.name = t.at("name").get<std::string>();
      s.model = model_from_json(t.value("model", json::object()), m.base_model);
      m.trainings.push_back(std::move(s));
    }
  } else {
    for (auto s : base.trainings) {
      const auto v = s.model.variant;
      const auto ti = s.model.text_input;
      const bool co = s.model.category_only;
      s.model = m.base_model;
      s.model.variant = v;
      s.model.text_input = ti;
      s.model.category_only = co;
      m.trainings.push_back(std::move(s));
    }
  }
  if (j.contains("rows")) {
    for (const auto& r : j.at("rows")) {
      check_keys(r, {"label", "training", "mode"}, "matrix.rows[]");
      m.rows.push_back({r.at("label").get<std::string>(), r.at("training").get<std::string>(),
                        parse_eval_mode(r.at("mode").get<std::string>())});
    }
  } else {
    m.rows = base.rows;
  }
  for (auto& t : m.trainings) {
    derive_model_fields(t.model, m.world);
    t.model.validate();
  }
  for (const auto& r : m.rows) {
    auto it = std::find_if(m.trainings.begin(), m.trainings.end(), [&](const auto& t) { return t.name == r.training; });
    if (it == m.trainings.end()) throw ConfigError("matrix row '" + r.label + "' names unknown training '" + r.training + "'");
    if (!mode_valid_for(it->model, r.mode))
      throw ConfigError("matrix row '" + r.label + "': mode '" + std::string(to_string(r.mode)) +
                        "' is not valid for its variant");
  }
  return m;
}

json to_json(const MatrixConfig& m) {
  json trainings = json::array();
  for (const auto& t : m.trainings) trainings.push_back({{"name", t.name}, {"model", to_json(t.model)}});
  json rows = json::array();
  for (const auto& r : m.rows) rows.push_back({{"label", r.label}, {"training", r.training}, {"mode", to_string(r.mode)}});
  return json{{"world", to_json(m.world)}, {"model", to_json(m.base_model)}, {"optim", optim_to_json(m.optim)},
              {"train", train_to_json(m.train)}, {"seeds", m.seeds}, {"trainings", trainings}, {"rows", rows},
              {"eval_limit", m.eval_limit}};
}

metrics::EvalReport median_report(const std::vector<metrics::EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("median_report: no reports");
  auto med = [&](auto field) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(field(r));
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  metrics::EvalReport out;
  for (int i = 0; i < 4; ++i) out.bleu[i] = med([i](const auto& r) { return r.bleu[i]; });
  for (int i = 0; i < 3; ++i) out.msj[i] = med([i](const auto& r) { return r.msj[i]; });
  out.rouge_l = med([](const auto& r) { return r.rouge_l; });
  out.cider = med([](const auto& r) { return r.cider; });
  out.meteor = med([](const auto& r) { return r.meteor; });
  out.items = reports.front().items;
  if (std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.overlap_accuracy.has_value(); }))
    out.overlap_accuracy = med([](const auto& r) { return *r.overlap_accuracy; });
  return out;
}

const RowResult* MatrixResult::find(std::string_view label) const {
  for (const auto& r : rows)
    if (r.row.label == label) return &r;
  return nullptr;
}

MatrixResult run_matrix(const MatrixConfig& cfg, const std::filesystem::path& out_dir, const ProgressFn& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  MatrixResult res;
  const std::uint64_t violations0 = realism::violations();
  const std::uint64_t scopes0 = realism::scopes_opened();

  const world::Dataset ds = world::generate_dataset(cfg.world.config, cfg.world.seed);
  const PreparedData data = prepare(ds, cfg.world, cfg.base_model.k);
  say("prepared " + std::to_string(data.train.size()) + " train / " + std::to_string(data.val.size()) +
      " val examples");

  for (const auto& row : cfg.rows) res.rows.push_back({row, {}, {}, {}});

  for (const auto& spec : cfg.trainings) {
    for (auto seed : cfg.seeds) {
      ExperimentConfig ec;
      ec.name = spec.name;
      ec.world = cfg.world;
      ec.model = spec.model;
      ec.optim = cfg.optim;
      ec.train = cfg.train;
      ec.train.seed = seed;
      ec.train.early_stop_mode.reset();
      const std::string tag = spec.name + "/seed" + std::to_string(seed);
      try {
        TrainResult tr = train(ec, data);
        if (!out_dir.empty()) {
          const auto dir = out_dir / spec.name / ("seed" + std::to_string(seed));
          tr.record.checkpoint = (dir / "best.ckpt").string();
          save_checkpoint(dir / "best.ckpt", *tr.model, json{{"name", spec.name}, {"seed", seed}});
          write_json_file(dir / "record.json", to_json(tr.record));
        }
        say(tag + ": " + tr.record.status + ", best BLEU-4 " + std::to_string(100.0 * tr.record.best_bleu4) +
            " at step " + std::to_string(tr.record.best_step) + " (" + std::to_string(tr.record.wall_seconds) + " s)");
        if (tr.record.status != "ok") {
          for (auto& rr : res.rows)
            if (rr.row.training == spec.name) rr.errors.push_back(tag + ": " + tr.record.message);
          res.runs.push_back(std::move(tr.record));
          continue;
        }
        for (auto& rr : res.rows) {
          if (rr.row.training != spec.name) continue;
          try {
            const auto er = evaluate(*tr.model, data.val, rr.row.mode, derive_seed(seed, "matrix/" + rr.row.label),
                                     cfg.eval_limit);
            rr.per_seed.push_back(er.report);
          } catch (const std::exception& e) {
            rr.errors.push_back(tag + ": " + e.what());
          }
        }
        res.runs.push_back(std::move(tr.record));
      } catch (const std::exception& e) {
        say(tag + ": failed: " + e.what());
        RunRecord failed;
        failed.name = spec.name;
        failed.status = "error";
        failed.message = e.what();
        res.runs.push_back(std::move(failed));
        for (auto& rr : res.rows)
          if (rr.row.training == spec.name) rr.errors.push_back(tag + ": " + e.what());
      }
    }
  }
  for (auto& rr : res.rows)
    if (!rr.per_seed.empty()) rr.median = median_report(rr.per_seed);

  // Uniformly random slot choice against gold slots, estimated on the validation split.
  std::mt19937_64 rng(derive_seed(cfg.world.seed, "random-overlap"));
  std::vector<std::vector<int>> pred;
  std::vector<std::vector<int>> gold;
  for (int rep = 0; rep < 200; ++rep) {
    for (const auto& ex : data.val) {
      const int k = std::min(cfg.base_model.k, ex.input.detected());
      pred.push_back(sampling::random_k_subset(ex.input.detected(), k, rng).indices());
      gold.push_back(ex.targets.gold_slots);
    }
  }
  res.random_overlap = metrics::overlap_accuracy(pred, gold, cfg.base_model.k);
  res.analytic_random_overlap = static_cast<double>(cfg.base_model.k) / cfg.world.config.k_o;
  res.realism_violations = realism::violations() - violations0;
  res.inference_scopes = realism::scopes_opened() - scopes0;
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!out_dir.empty()) {
    write_json_file(out_dir / "matrix.json", to_json(res));
    std::ofstream(out_dir / "table.md") << format_table(res);
    // Serves the first seed's checkpoint of each training.
    json served = json::array();
    for (const auto& spec : cfg.trainings)
      served.push_back({{"name", spec.name},
                        {"checkpoint", (std::filesystem::path(spec.name) / ("seed" + std::to_string(cfg.seeds.front())) / "best.ckpt")
                                           .generic_string()}});
    write_json_file(out_dir / "manifest.json", json{{"config", to_json(cfg)},
                                                    {"config_hash", config_hash(to_json(cfg))},
                                                    {"world", to_json(cfg.world)},
                                                    {"variants", served}});
  }
  return res;
}

json to_json(const MatrixResult& m) {
  json rows = json::array();
  for (const auto& r : m.rows) {
    json seeds = json::array();
    for (const auto& s : r.per_seed) seeds.push_back(to_json(s));
    rows.push_back({{"label", r.row.label}, {"training", r.row.training}, {"mode", to_string(r.row.mode)},
                    {"median", r.per_seed.empty() ? json(nullptr) : to_json(r.median)}, {"per_seed", seeds},
                    {"errors", r.errors}});
  }
  json runs = json::array();
  for (const auto& r : m.runs) {
    json j = to_json(r);
    j.erase("steps");
    runs.push_back(j);
  }
  return json{{"rows", rows},
              {"runs", runs},
              {"wall_seconds", m.wall_seconds},
              {"realism_violations", m.realism_violations},
              {"inference_scopes", m.inference_scopes},
              {"random_overlap", m.random_overlap},
              {"analytic_random_overlap", m.analytic_random_overlap}};
}

std::string format_table(const MatrixResult& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "| row | BLEU-1 | BLEU-2 | BLEU-3 | BLEU-4 | CIDEr | METEOR | ROUGE-L | MSJ-3 | MSJ-4 | MSJ-5 | overlap |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : m.rows) {
    os << "| " << r.row.label;
    if (r.per_seed.empty()) {
      os << " | failed |||||||||||\n";
      continue;
    }
    const auto& e = r.median;
    for (double b : e.bleu) os << " | " << 100.0 * b;
    os << " | " << 1000.0 * e.cider << " | " << 100.0 * e.meteor << " | " << 100.0 * e.rouge_l;
    for (double s : e.msj) os << " | " << 100.0 * s;
    os << " | ";
    if (e.overlap_accuracy) os << 100.0 * *e.overlap_accuracy;
    else os << "-";
    os << " |\n";
  }
  return os.str();
}

}  // namespace gvqg::harness
