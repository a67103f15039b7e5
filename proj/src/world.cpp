#include "gvqg/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "gvqg/hash.hpp"
#include "gvqg/realism.hpp"

namespace gvqg::world {

using nlohmann::json;

const std::vector<LabelInfo>& ontology() {
  static const std::vector<LabelInfo> kOntology = {
      {"person", "people", "walking", "cloth", 3.0},      {"dog", "dogs", "running", "fur", 3.0},
      {"cat", "cats", "sleeping", "fur", 2.5},            {"horse", "horses", "galloping", "hair", 2.0},
      {"cow", "cows", "grazing", "hide", 1.5},            {"sheep", "sheep", "grazing", "wool", 1.5},
      {"bird", "birds", "flying", "feathers", 1.5},       {"elephant", "elephants", "drinking", "skin", 2.0},
      {"giraffe", "giraffes", "eating", "skin", 2.0},     {"zebra", "zebras", "standing", "hair", 2.0},
      {"bear", "bears", "climbing", "fur", 2.0},          {"car", "cars", "parked", "metal", 1.5},
      {"bus", "buses", "driving", "metal", 1.5},          {"truck", "trucks", "driving", "metal", 1.0},
      {"bicycle", "bicycles", "leaning", "metal", 1.0},   {"motorcycle", "motorcycles", "parked", "metal", 1.0},
      {"boat", "boats", "floating", "wood", 1.0},         {"train", "trains", "moving", "steel", 1.5},
      {"airplane", "airplanes", "flying", "aluminum", 1.5}, {"tree", "trees", "growing", "wood", 0.3},
      {"flower", "flowers", "blooming", "petals", 0.5},   {"grass", "grass", "growing", "leaves", 0.2},
      {"bench", "benches", "standing", "wood", 0.4},      {"chair", "chairs", "standing", "wood", 0.4},
      {"table", "tables", "standing", "wood", 0.4},       {"umbrella", "umbrellas", "opening", "fabric", 0.8},
      {"kite", "kites", "flying", "paper", 1.0},          {"frisbee", "frisbees", "flying", "plastic", 1.2},
      {"ball", "balls", "bouncing", "rubber", 1.0},       {"bottle", "bottles", "standing", "glass", 0.5},
      {"cup", "cups", "standing", "ceramic", 0.5},        {"bowl", "bowls", "standing", "ceramic", 0.4},
      {"pizza", "pizzas", "cooling", "dough", 1.2},       {"cake", "cakes", "cooling", "sponge", 1.2},
      {"banana", "bananas", "ripening", "fruit", 0.6},    {"apple", "apples", "ripening", "fruit", 0.6},
      {"clock", "clocks", "ticking", "metal", 0.6},       {"lamp", "lamps", "glowing", "metal", 0.3},
      {"book", "books", "lying", "paper", 0.4},           {"laptop", "laptops", "running", "plastic", 0.8},
  };
  return kOntology;
}

const LabelInfo* find_label(std::string_view name) {
  for (const auto& l : ontology())
    if (l.name == name) return &l;
  return nullptr;
}

const std::vector<std::string>& colors() {
  static const std::vector<std::string> kColors = {"red", "blue", "green", "yellow",
                                                   "black", "white", "brown", "gray"};
  return kColors;
}

const std::vector<std::string>& templated_categories() {
  static const std::vector<std::string> kNames = {"count", "color",  "object",   "attribute",
                                                  "location", "binary", "activity", "other"};
  return kNames;
}

// ---------------------------------------------------------------------------
// Taxonomy

CategoryTaxonomy CategoryTaxonomy::desk_default() { return CategoryTaxonomy(templated_categories()); }

CategoryTaxonomy::CategoryTaxonomy(std::vector<std::string> names) : names_(std::move(names)) {}

int CategoryTaxonomy::index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  return -1;
}

void CategoryTaxonomy::validate() const {
  if (names_.empty()) throw ConfigError("taxonomy", "no categories");
  if (names_.size() > 16) throw ConfigError("taxonomy", "more than 16 categories");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ConfigError("taxonomy", "empty category name");
    if (!seen.insert(n).second) throw ConfigError("taxonomy", "duplicate category '" + n + "'");
  }
  if (!seen.count("other")) throw ConfigError("taxonomy", "'other' must be present");
}

std::string_view to_string(Split s) { return s == Split::train ? "train" : "val"; }

std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// QA accessors

const Tokens& QAInstance::question() const {
  realism::note_ground_truth_read();
  return question_;
}

const Tokens& QAInstance::answer() const {
  realism::note_ground_truth_read();
  return answer_;
}

const Tokens& QAInstance::gold_concepts_hint() const {
  realism::note_ground_truth_read();
  return hint_;
}

Tokens QAInstance::qa_tokens() const {
  Tokens out = question();
  const Tokens& a = answer();
  out.insert(out.end(), a.begin(), a.end());
  return out;
}

// ---------------------------------------------------------------------------
// Config

void DetectorNoise::validate() const {
  if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) throw ConfigError("detector.drop_prob", "must be in [0,1]");
  if (!(confuse_prob >= 0.0 && confuse_prob <= 1.0))
    throw ConfigError("detector.confuse_prob", "must be in [0,1]");
}

void WorldConfig::validate() const {
  if (num_scenes < 2) throw ConfigError("num_scenes", "must be at least 2");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction", "must be in (0,1)");
  if (k_o < 1) throw ConfigError("k_o", "must be positive");
  if (min_objects < 1) throw ConfigError("min_objects", "must be positive");
  if (max_objects < min_objects) throw ConfigError("max_objects", "must be >= min_objects");
  if (max_objects > k_o) throw ConfigError("max_objects", "must be <= k_o");
  if (max_objects > static_cast<int>(ontology().size())) throw ConfigError("max_objects", "exceeds ontology size");
  if (feature_dim < 1) throw ConfigError("feature_dim", "must be positive");
  if (!(feature_noise >= 0.0)) throw ConfigError("feature_noise", "must be non-negative");
  if (extra_qa_per_scene < 0) throw ConfigError("extra_qa_per_scene", "must be non-negative");
  if (!(focus_exponent >= 0.0)) throw ConfigError("focus_exponent", "must be non-negative");
  taxonomy.validate();
  if (!category_weights.empty()) {
    if (static_cast<int>(category_weights.size()) != taxonomy.size())
      throw ConfigError("category_weights", "one weight per taxonomy entry required");
    double total = 0.0;
    for (double w : category_weights) {
      if (!(w >= 0.0)) throw ConfigError("category_weights", "weights must be non-negative");
      total += w;
    }
    if (!(total > 0.0)) throw ConfigError("category_weights", "weights must not all be zero");
  }
  detector.validate();
  const int num_val = static_cast<int>(std::lround(num_scenes * val_fraction));
  if (num_val < 1 || num_val >= num_scenes) throw ConfigError("val_fraction", "leaves an empty split");
}

// ---------------------------------------------------------------------------
// Features

std::vector<double> object_feature(std::string_view label, std::string_view color, int dim, double noise_sigma,
                                   std::uint64_t rng_seed) {
  std::vector<double> f(static_cast<std::size_t>(dim));
  std::normal_distribution<double> nd(0.0, 1.0);
  std::mt19937_64 lr(derive_seed(0x6c6162656cull, label));
  std::mt19937_64 cr(derive_seed(0x636f6c6f72ull, color));
  std::mt19937_64 nr(rng_seed);
  for (auto& v : f) v = 0.8 * nd(lr);
  for (auto& v : f) v += 0.6 * nd(cr);
  for (auto& v : f) v += noise_sigma * nd(nr);
  return f;
}

namespace {

double center_x(const ObjectInstance& o) { return 0.5 * (o.bbox[0] + o.bbox[2]); }
double area(const ObjectInstance& o) { return (o.bbox[2] - o.bbox[0]) * (o.bbox[3] - o.bbox[1]); }

std::string location_of(const ObjectInstance& o) {
  const double cx = center_x(o);
  if (cx < 1.0 / 3.0) return "left";
  if (cx > 2.0 / 3.0) return "right";
  return "middle";
}

std::string size_of(const ObjectInstance& o) { return area(o) >= 0.06 ? "big" : "small"; }

double focus_weight(const ObjectInstance& o, double exponent) { return std::pow(find_label(o.label)->salience, exponent); }

std::size_t pick_salient(const Scene& s, double exponent, std::mt19937_64& rng) {
  std::vector<double> w;
  for (const auto& o : s.objects) w.push_back(focus_weight(o, exponent));
  std::discrete_distribution<std::size_t> dd(w.begin(), w.end());
  return dd(rng);
}

QAInstance make_qa(const Scene& s, const std::string& category, double exponent, std::mt19937_64& rng) {
  const ObjectInstance& t = s.objects[pick_salient(s, exponent, rng)];
  const LabelInfo& info = *find_label(t.label);
  if (category == "count")
    return {s.scene_id, {"how", "many", info.plural, "are", "there", "?"}, {std::to_string(t.count_group)}, category, {t.label}};
  if (category == "color")
    return {s.scene_id, {"what", "color", "is", "the", t.label, "?"}, {t.color}, category, {t.label, t.color}};
  if (category == "object") {
    std::vector<std::size_t> unique_color;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      int same = 0;
      for (const auto& o : s.objects) same += (o.color == s.objects[i].color);
      if (same == 1) unique_color.push_back(i);
    }
    if (!unique_color.empty()) {
      std::vector<double> w;
      for (auto i : unique_color) w.push_back(focus_weight(s.objects[i], exponent));
      std::discrete_distribution<std::size_t> dd(w.begin(), w.end());
      const ObjectInstance& o = s.objects[unique_color[dd(rng)]];
      return {s.scene_id, {"what", "is", "the", o.color, "object", "?"}, {o.label}, category, {o.label, o.color}};
    }
    const bool left = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    auto it = left ? std::min_element(s.objects.begin(), s.objects.end(),
                                      [](const auto& a, const auto& b) { return center_x(a) < center_x(b); })
                   : std::max_element(s.objects.begin(), s.objects.end(),
                                      [](const auto& a, const auto& b) { return center_x(a) < center_x(b); });
    return {s.scene_id, {"what", "object", "is", "on", "the", left ? "left" : "right", "?"}, {it->label}, category, {it->label}};
  }
  if (category == "attribute")
    return {s.scene_id, {"what", "size", "is", "the", t.label, "?"}, {size_of(t)}, category, {t.label}};
  if (category == "location")
    return {s.scene_id, {"where", "is", "the", t.label, "?"}, {location_of(t)}, category, {t.label}};
  if (category == "binary") {
    if (std::uniform_int_distribution<int>(0, 1)(rng) == 0)
      return {s.scene_id, {"is", "there", "a", t.label, "?"}, {"yes"}, category, {t.label}};
    std::vector<std::string> absent;
    for (const auto& l : ontology()) {
      bool present = false;
      for (const auto& o : s.objects) present = present || o.label == l.name;
      if (!present) absent.push_back(l.name);
    }
    const auto& a = absent[std::uniform_int_distribution<std::size_t>(0, absent.size() - 1)(rng)];
    return {s.scene_id, {"is", "there", "a", a, "?"}, {"no"}, category, {a}};
  }
  if (category == "activity")
    return {s.scene_id, {"what", "is", "the", t.label, "doing", "?"}, {info.activity}, category, {t.label}};
  if (category == "other")
    return {s.scene_id, {"what", "is", "the", t.label, "made", "of", "?"}, {info.material}, category, {t.label}};
  throw std::logic_error("no template for category " + category);
}

bool has_template(const std::string& c) {
  const auto& t = templated_categories();
  return std::find(t.begin(), t.end(), c) != t.end();
}

Scene make_scene(const WorldConfig& cfg, int index, Split split, std::mt19937_64& rng) {
  Scene s;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%04d", index);
  s.scene_id = buf;
  s.split = split;
  const int n = std::uniform_int_distribution<int>(cfg.min_objects, cfg.max_objects)(rng);
  std::vector<std::size_t> idx(ontology().size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < n; ++i) {
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[std::uniform_int_distribution<std::size_t>(static_cast<std::size_t>(i), idx.size() - 1)(rng)]);
  }
  std::uniform_real_distribution<double> ur(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    ObjectInstance o;
    o.label = ontology()[idx[static_cast<std::size_t>(i)]].name;
    o.color = colors()[std::uniform_int_distribution<std::size_t>(0, colors().size() - 1)(rng)];
    o.count_group = std::uniform_int_distribution<int>(1, 4)(rng);
    const double w = 0.1 + 0.25 * ur(rng);
    const double h = 0.1 + 0.25 * ur(rng);
    const double x1 = (1.0 - w) * ur(rng);
    const double y1 = (1.0 - h) * ur(rng);
    o.bbox = {x1, y1, x1 + w, y1 + h};
    o.feature = object_feature(o.label, o.color, cfg.feature_dim, cfg.feature_noise, rng());
    s.objects.push_back(std::move(o));
  }
  s.caption_gt = caption_scene(s);
  return s;
}

}  // namespace

Dataset generate_dataset(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.seed = seed;
  std::mt19937_64 rng(mix64(seed));
  const int num_val = static_cast<int>(std::lround(config.num_scenes * config.val_fraction));
  const int num_train = config.num_scenes - num_val;

  std::vector<std::string> cats;
  std::vector<double> weights;
  for (int c = 0; c < config.taxonomy.size(); ++c) {
    const auto& name = config.taxonomy.name(c);
    if (!has_template(name)) continue;
    cats.push_back(name);
    weights.push_back(config.category_weights.empty() ? 1.0 : config.category_weights[static_cast<std::size_t>(c)]);
  }

  for (int i = 0; i < config.num_scenes; ++i) {
    Scene s = make_scene(config, i, i < num_train ? Split::train : Split::val, rng);
    for (const auto& c : cats) ds.qa.push_back(make_qa(s, c, config.focus_exponent, rng));
    if (config.extra_qa_per_scene > 0) {
      std::discrete_distribution<std::size_t> dd(weights.begin(), weights.end());
      for (int e = 0; e < config.extra_qa_per_scene; ++e) ds.qa.push_back(make_qa(s, cats[dd(rng)], config.focus_exponent, rng));
    }
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

const Scene* Dataset::find_scene(std::string_view id) const {
  for (const auto& s : scenes)
    if (s.scene_id == id) return &s;
  return nullptr;
}

std::vector<const Scene*> Dataset::scenes_in(Split sp) const {
  std::vector<const Scene*> out;
  for (const auto& s : scenes)
    if (s.split == sp) out.push_back(&s);
  return out;
}

std::vector<const QAInstance*> Dataset::qa_in(Split sp) const {
  std::unordered_map<std::string, Split> split_of;
  for (const auto& s : scenes) split_of[s.scene_id] = s.split;
  std::vector<const QAInstance*> out;
  for (const auto& q : qa)
    if (split_of.at(q.scene_id()) == sp) out.push_back(&q);
  return out;
}

// ---------------------------------------------------------------------------
// Detection and captioning

ObjectDetection detect_objects(const Scene& scene, const DetectorNoise& noise, std::uint64_t seed, int k_o) {
  noise.validate();
  std::mt19937_64 rng(derive_seed(seed, scene.scene_id));
  std::uniform_real_distribution<double> ur(0.0, 1.0);
  std::vector<std::size_t> order(scene.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return scene.objects[a].bbox[0] < scene.objects[b].bbox[0]; });
  const int d_f = scene.objects.empty() ? 0 : static_cast<int>(scene.objects.front().feature.size());

  ObjectDetection det;
  det.features = Matrix(k_o, d_f);
  det.boxes = Matrix(k_o, 4);
  det.valid.assign(static_cast<std::size_t>(k_o), 0);
  int slot = 0;
  for (auto i : order) {
    const ObjectInstance& o = scene.objects[i];
    // Draw both variates for every object so streams stay aligned across noise settings.
    const double u_drop = ur(rng);
    const double u_conf = ur(rng);
    const std::size_t alt = std::uniform_int_distribution<std::size_t>(0, ontology().size() - 2)(rng);
    if (u_drop < noise.drop_prob) continue;
    if (slot >= k_o) break;
    std::string label = o.label;
    if (u_conf < noise.confuse_prob) {
      std::vector<std::string> others;
      for (const auto& l : ontology())
        if (l.name != o.label) others.push_back(l.name);
      label = others[alt];
    }
    det.labels.push_back(label);
    for (int c = 0; c < d_f; ++c) det.features(slot, c) = o.feature[static_cast<std::size_t>(c)];
    for (int c = 0; c < 4; ++c) det.boxes(slot, c) = std::clamp(o.bbox[static_cast<std::size_t>(c)], 0.0, 1.0);
    det.valid[static_cast<std::size_t>(slot)] = 1;
    ++slot;
  }
  return det;
}

Tokens caption_scene(const Scene& scene) {
  Tokens cap = {"a", "scene", "with"};
  if (scene.objects.empty()) return cap;
  const auto& first = scene.objects[0];
  cap.insert(cap.end(), {"a", first.color, first.label});
  if (scene.objects.size() > 1) cap.insert(cap.end(), {"and", "a", scene.objects[1].label});
  return cap;
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

json config_to_json(const WorldConfig& c) {
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
              {"taxonomy", c.taxonomy.names()},
              {"detector", {{"drop_prob", c.detector.drop_prob}, {"confuse_prob", c.detector.confuse_prob}}}};
}

WorldConfig config_from_json(const json& j) {
  WorldConfig c;
  c.num_scenes = j.value("num_scenes", c.num_scenes);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.k_o = j.value("k_o", c.k_o);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.feature_noise = j.value("feature_noise", c.feature_noise);
  c.extra_qa_per_scene = j.value("extra_qa_per_scene", c.extra_qa_per_scene);
  c.focus_exponent = j.value("focus_exponent", c.focus_exponent);
  c.category_weights = j.value("category_weights", c.category_weights);
  if (j.contains("taxonomy")) c.taxonomy = CategoryTaxonomy(j.at("taxonomy").get<std::vector<std::string>>());
  if (j.contains("detector")) {
    c.detector.drop_prob = j.at("detector").value("drop_prob", 0.0);
    c.detector.confuse_prob = j.at("detector").value("confuse_prob", 0.0);
  }
  return c;
}

json scene_to_json(const Scene& s) {
  json objs = json::array();
  for (const auto& o : s.objects)
    objs.push_back({{"label", o.label}, {"color", o.color}, {"count_group", o.count_group}, {"bbox", o.bbox}, {"feature", o.feature}});
  return json{{"scene_id", s.scene_id}, {"split", to_string(s.split)}, {"caption_gt", s.caption_gt}, {"objects", objs}};
}

json qa_to_json(const QAInstance& q) {
  return json{{"scene_id", q.scene_id()},
              {"category", q.category()},
              {"question", q.question()},
              {"answer", q.answer()},
              {"gold_concepts_hint", q.gold_concepts_hint()}};
}

std::string manifest_text(const Dataset& ds) {
  json m{{"format", "gvqg-dataset"}, {"format_version", 1}, {"seed", ds.seed}, {"config", config_to_json(ds.config)},
         {"files", {"scenes.jsonl", "qa.jsonl"}}};
  return m.dump(2) + "\n";
}

std::string scenes_text(const Dataset& ds) {
  std::string out;
  for (const auto& s : ds.scenes) out += scene_to_json(s).dump() + "\n";
  return out;
}

std::string qa_text(const Dataset& ds) {
  std::string out;
  for (const auto& q : ds.qa) out += qa_to_json(q).dump() + "\n";
  return out;
}

}  // namespace

std::string serialize_dataset(const Dataset& ds) { return manifest_text(ds) + scenes_text(ds) + qa_text(ds); }

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "manifest.json") << manifest_text(ds);
  std::ofstream(dir / "scenes.jsonl") << scenes_text(ds);
  std::ofstream(dir / "qa.jsonl") << qa_text(ds);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("missing dataset manifest in " + dir.string());
  const json m = json::parse(mf);
  if (m.value("format", "") != "gvqg-dataset") throw std::runtime_error("not a gvqg dataset manifest");
  Dataset ds;
  ds.seed = m.at("seed").get<std::uint64_t>();
  ds.config = config_from_json(m.at("config"));
  std::ifstream sf(dir / "scenes.jsonl");
  std::string line;
  while (std::getline(sf, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Scene s;
    s.scene_id = j.at("scene_id");
    s.split = parse_split(j.at("split").get<std::string>()).value();
    s.caption_gt = j.at("caption_gt").get<Tokens>();
    for (const auto& o : j.at("objects")) {
      ObjectInstance obj;
      obj.label = o.at("label");
      obj.color = o.at("color");
      obj.count_group = o.at("count_group");
      obj.bbox = o.at("bbox").get<std::array<double, 4>>();
      obj.feature = o.at("feature").get<std::vector<double>>();
      s.objects.push_back(std::move(obj));
    }
    ds.scenes.push_back(std::move(s));
  }
  std::ifstream qf(dir / "qa.jsonl");
  while (std::getline(qf, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    ds.qa.emplace_back(j.at("scene_id"), j.at("question").get<Tokens>(), j.at("answer").get<Tokens>(),
                       j.at("category"), j.at("gold_concepts_hint").get<Tokens>());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Vocabulary

namespace {

std::vector<std::string> standard_words() {
  std::vector<std::string> specials = {"<pad>", "<bos>", "<eos>", "<unk>"};
  std::set<std::string> words = {"how", "many", "are", "there", "?", "what", "color", "is", "the", "object",
                                 "on", "left", "right", "middle", "size", "where", "a", "doing", "made",
                                 "of", "yes", "no", "big", "small", "scene", "with", "and", "1", "2", "3", "4"};
  for (const auto& c : templated_categories()) words.insert(c);
  for (const auto& c : colors()) words.insert(c);
  for (const auto& l : ontology()) {
    words.insert(l.name);
    words.insert(l.plural);
    words.insert(l.activity);
    words.insert(l.material);
  }
  std::vector<std::string> out = specials;
  out.insert(out.end(), words.begin(), words.end());
  return out;
}

}  // namespace

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary v(standard_words());
  return v;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {}

int Vocabulary::id(std::string_view w) const {
  for (std::size_t i = 0; i < words_.size(); ++i)
    if (words_[i] == w) return static_cast<int>(i);
  return kUnk;
}

bool Vocabulary::contains(std::string_view w) const {
  return std::find(words_.begin(), words_.end(), w) != words_.end();
}

std::vector<int> Vocabulary::encode(const Tokens& toks) const {
  std::vector<int> out;
  out.reserve(toks.size());
  for (const auto& t : toks) out.push_back(id(t));
  return out;
}

Tokens Vocabulary::decode(const std::vector<int>& ids) const {
  Tokens out;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kPad || i == kBos || i < 0 || i >= size()) continue;
    out.push_back(words_[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& w : words_) h = fnv1a64(w + "\n", h);
  return h;
}

std::string join(const Tokens& toks, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += sep;
    out += toks[i];
  }
  return out;
}

Tokens split_ws(std::string_view text) {
  Tokens out;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace gvqg::world
