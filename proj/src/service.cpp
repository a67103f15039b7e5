#include "gvqg/service.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>

#include <httplib.h>

#include "gvqg/concepts.hpp"

namespace gvqg::service {

namespace {

Response error(int status, const std::string& message, const world::Tokens& offending = {}) {
  json body{{"error", message}};
  if (!offending.empty()) body["offending"] = offending;
  return {status, body};
}

std::optional<int> parse_int(const std::string& s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

json bbox_json(const std::array<double, 4>& b) { return json::array({b[0], b[1], b[2], b[3]}); }

std::vector<std::string> modes_for(const models::ModelConfig& m) {
  if (m.variant == models::Variant::explicit_guided) return {"actor", "random"};
  if (m.variant == models::Variant::baseline || m.category_only) return {"none"};
  return {"predicted", "random"};
}

}  // namespace

GuidanceService::GuidanceService(world::Dataset dataset, harness::WorldSpec spec, std::vector<ServedVariant> variants)
    : dataset_(std::move(dataset)), spec_(std::move(spec)), variants_(std::move(variants)) {
  // The service only ever sees scenes.
  dataset_.qa.clear();
  for (const auto& s : dataset_.scenes) {
    SceneView v;
    v.scene = &s;
    v.detection = world::detect_objects(s, world::DetectorNoise{}, spec_.detector_seed, dataset_.config.k_o);
    v.candidates = concepts::build_candidate_concepts(v.detection.labels, world::caption_scene(s));
    views_.emplace(s.scene_id, std::move(v));
  }
  for (const auto& v : variants_)
    if (v.model) k_max_ = std::max(k_max_, v.model->config().k);
}

GuidanceService GuidanceService::from_manifest(const std::filesystem::path& manifest) {
  const json j = harness::read_json_file(manifest);
  const auto base = manifest.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  harness::WorldSpec spec;
  world::Dataset ds;
  if (j.contains("dataset")) {
    ds = world::read_dataset(resolve(j.at("dataset").get<std::string>()));
    spec.config = ds.config;
    spec.seed = ds.seed;
    if (j.contains("world")) spec.detector_seed = harness::world_from_json(j.at("world")).detector_seed;
  } else if (j.contains("world")) {
    spec = harness::world_from_json(j.at("world"));
    ds = world::generate_dataset(spec.config, spec.seed);
  } else {
    throw harness::ConfigError("manifest needs 'world' or 'dataset'");
  }
  std::vector<ServedVariant> variants;
  for (const auto& v : j.value("variants", json::array())) {
    ServedVariant sv;
    sv.name = v.at("name").get<std::string>();
    sv.checkpoint = resolve(v.at("checkpoint").get<std::string>());
    try {
      sv.model = harness::load_checkpoint(sv.checkpoint).model;
    } catch (const std::exception& e) {
      sv.load_error = e.what();
    }
    variants.push_back(std::move(sv));
  }
  return GuidanceService(std::move(ds), std::move(spec), std::move(variants));
}

const GuidanceService::SceneView* GuidanceService::find(const std::string& id) const {
  const auto it = views_.find(id);
  return it == views_.end() ? nullptr : &it->second;
}

json GuidanceService::summary(const world::Scene& s) const {
  json objects = json::array();
  world::Tokens labels;
  for (const auto& o : s.objects) {
    objects.push_back({{"label", o.label}, {"color", o.color}, {"count_group", o.count_group}, {"bbox", bbox_json(o.bbox)}});
    labels.push_back(o.label);
  }
  return {{"id", s.scene_id}, {"split", world::to_string(s.split)}, {"labels", labels}, {"objects", objects}};
}

Response GuidanceService::health() const {
  int loaded = 0;
  for (const auto& v : variants_) loaded += v.model != nullptr;
  return {200,
          {{"status", "ok"},
           {"scenes", dataset_.scenes.size()},
           {"variants_loaded", loaded},
           {"variants_unavailable", static_cast<int>(variants_.size()) - loaded}}};
}

Response GuidanceService::variants() const {
  json list = json::array();
  for (const auto& v : variants_) {
    json e{{"name", v.name}, {"available", v.model != nullptr}};
    if (v.model) {
      const auto& m = v.model->config();
      e["variant"] = models::to_string(m.variant);
      e["text_input"] = models::to_string(m.text_input);
      e["category_only"] = m.category_only;
      e["k"] = m.k;
      e["modes"] = modes_for(m);
      e["accepts_concepts"] = m.variant == models::Variant::explicit_guided;
    } else {
      e["error"] = v.load_error;
    }
    list.push_back(e);
  }
  return {200, {{"variants", list}, {"k_max", k_max_}, {"categories", dataset_.config.taxonomy.names()}}};
}

Response GuidanceService::scenes(const std::optional<std::string>& split, const std::optional<std::string>& page,
                                 const std::optional<std::string>& page_size) const {
  std::optional<world::Split> which;
  if (split && !split->empty()) {
    which = world::parse_split(*split);
    if (!which) return error(404, "unknown split '" + *split + "'");
  }
  const auto p = page ? parse_int(*page) : std::optional<int>(0);
  const auto n = page_size ? parse_int(*page_size) : std::optional<int>(20);
  if (!p || *p < 0) return error(400, "page must be a non-negative integer");
  if (!n || *n < 1 || *n > 200) return error(400, "page_size must be an integer in 1..200");
  std::vector<const world::Scene*> selected;
  for (const auto& s : dataset_.scenes)
    if (!which || s.split == *which) selected.push_back(&s);
  json items = json::array();
  const std::size_t begin = static_cast<std::size_t>(*p) * static_cast<std::size_t>(*n);
  for (std::size_t i = begin; i < selected.size() && i < begin + static_cast<std::size_t>(*n); ++i)
    items.push_back(summary(*selected[i]));
  return {200,
          {{"split", which ? json(world::to_string(*which)) : json(nullptr)},
           {"page", *p},
           {"page_size", *n},
           {"total", selected.size()},
           {"scenes", items}}};
}

Response GuidanceService::scene(const std::string& id) const {
  const SceneView* v = find(id);
  if (!v) return error(404, "unknown scene '" + id + "'");
  json body = summary(*v->scene);
  json detections = json::array();
  int slot = 0;
  for (std::size_t i = 0; i < v->detection.valid.size(); ++i) {
    if (!v->detection.valid[i]) continue;
    const int r = static_cast<int>(i);
    const auto& b = v->detection.boxes;
    detections.push_back({{"slot", slot},
                          {"label", v->detection.labels[static_cast<std::size_t>(slot)]},
                          {"bbox", json::array({b(r, 0), b(r, 1), b(r, 2), b(r, 3)})}});
    ++slot;
  }
  body["detections"] = detections;
  body["caption"] = world::join(world::caption_scene(*v->scene));
  return {200, body};
}

Response GuidanceService::concepts(const std::string& id) const {
  const SceneView* v = find(id);
  if (!v) return error(404, "unknown scene '" + id + "'");
  json candidates = json::array();
  for (std::size_t i = 0; i < v->candidates.tokens.size(); ++i)
    candidates.push_back({{"token", v->candidates.tokens[i]},
                          {"provenance", v->candidates.provenance[i] == concepts::Provenance::object ? "object"
                                                                                                     : "caption"}});
  return {200,
          {{"scene_id", id},
           {"candidates", candidates},
           {"categories", dataset_.config.taxonomy.names()},
           {"k_max", k_max_}}};
}

Response GuidanceService::generate(const json& req) const {
  const auto t0 = std::chrono::steady_clock::now();
  if (!req.is_object()) return error(400, "request body must be a JSON object");
  static const std::vector<std::string> known{"scene_id", "variant", "mode", "concepts", "category", "seed",
                                              "temperature", "request_id"};
  world::Tokens unknown;
  for (const auto& [key, value] : req.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) unknown.push_back(key);
  if (!unknown.empty()) return error(400, "unknown request fields", unknown);

  std::string scene_id, variant_name, mode, category;
  world::Tokens requested;
  std::uint64_t seed = 0;
  double temperature = 0.0;
  try {
    scene_id = req.at("scene_id").get<std::string>();
    variant_name = req.at("variant").get<std::string>();
    mode = req.value("mode", std::string());
    category = req.value("category", std::string());
    requested = req.value("concepts", world::Tokens{});
    seed = req.value("seed", std::uint64_t{0});
    temperature = req.value("temperature", 0.0);
  } catch (const json::exception& e) {
    return error(400, std::string("malformed request: ") + e.what());
  }
  if (temperature < 0.0) return error(400, "temperature must be >= 0");

  const SceneView* view = find(scene_id);
  if (!view) return error(404, "unknown scene '" + scene_id + "'");
  const auto vit = std::find_if(variants_.begin(), variants_.end(),
                                [&](const ServedVariant& v) { return v.name == variant_name; });
  if (vit == variants_.end()) return error(404, "unknown variant '" + variant_name + "'");
  if (!vit->model) return error(503, "variant '" + variant_name + "' has no loaded checkpoint: " + vit->load_error);
  const models::Model& model = *vit->model;
  const auto& mc = model.config();
  const auto allowed = modes_for(mc);
  if (mode.empty()) mode = allowed.front();
  if (std::find(allowed.begin(), allowed.end(), mode) == allowed.end())
    return error(400, "mode '" + mode + "' is not valid for variant '" + variant_name + "'");
  if (view->detection.empty() && (mc.variant == models::Variant::implicit || mc.variant == models::Variant::variational))
    return error(422, "scene has no detected objects");

  const auto& vocab = world::Vocabulary::standard();
  const auto& tax = dataset_.config.taxonomy;
  models::GenerateOptions opts;
  opts.seed = seed;
  opts.decode.max_len = mc.core.max_len;
  opts.decode.temperature = temperature;
  const models::SceneInput input = models::make_scene_input(view->detection, vocab);
  json guidance{{"mode", mode}};
  models::GenerationOutput out;

  if (mc.variant == models::Variant::explicit_guided) {
    concepts::ConceptSelection sel;
    if (mode == "random") {
      if (!requested.empty() || !category.empty()) return error(400, "random mode takes no concepts or category");
      sel = concepts::random_selection(view->candidates, mc.k, tax, seed);
    } else {
      if (requested.empty() && category.empty()) return error(400, "explicit variants need concepts and/or a category");
      if (!category.empty() && tax.index(category) < 0) return error(422, "unknown category", {category});
      try {
        sel = concepts::actor_selection(view->candidates, requested, category, k_max_);
      } catch (const concepts::SelectionError& e) {
        return error(422, e.what(), e.offending);
      } catch (const std::invalid_argument& e) {
        return error(422, e.what());
      }
    }
    models::Guidance g;
    if (mc.text_input != models::TextInput::category) g.concept_ids = vocab.encode(sel.concepts);
    if (mc.text_input != models::TextInput::objects && !sel.category.empty()) g.category_token = vocab.id(sel.category);
    if (g.empty())
      return error(400, "variant '" + variant_name + "' reads " + std::string(models::to_string(mc.text_input)) +
                            " guidance, which this request does not provide");
    guidance["concepts"] = mc.text_input == models::TextInput::category ? world::Tokens{} : sel.concepts;
    guidance["category"] = mc.text_input == models::TextInput::objects ? std::string() : sel.category;
    out = model.generate(input, &g, opts);
  } else {
    if (!requested.empty()) return error(400, "variant '" + variant_name + "' does not accept concepts", requested);
    if (!category.empty()) return error(400, "variant '" + variant_name + "' does not accept a category");
    if (mode == "random") opts.mask_mode = sampling::MaskMode::random;
    out = model.generate(input, nullptr, opts);
    if (out.has_mask) {
      const auto slots = out.mask.indices();
      world::Tokens labels;
      for (int s : slots) labels.push_back(view->detection.labels[static_cast<std::size_t>(s)]);
      guidance["mask"] = slots;
      guidance["mask_labels"] = labels;
      guidance["mask_mode"] = sampling::to_string(out.mask.mode);
      guidance["predicted_category"] = tax.name(out.category);
      guidance["category_probs"] = out.category_probs;
    }
  }

  const world::Tokens question = vocab.decode(out.question);
  json body{{"scene_id", scene_id},
            {"variant", variant_name},
            {"model_variant", models::to_string(mc.variant)},
            {"question", question},
            {"text", world::join(question)},
            {"guidance", guidance},
            {"seed", seed},
            {"latency_ms", std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()}};
  if (req.contains("request_id")) body["request_id"] = req.at("request_id");
  return {200, body};
}

void bind_routes(httplib::Server& server, const GuidanceService& service) {
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto param = [](const httplib::Request& req, const char* name) -> std::optional<std::string> {
    if (!req.has_param(name)) return std::nullopt;
    return req.get_param_value(name);
  };
  server.Get("/health", [&service, reply](const httplib::Request&, httplib::Response& res) { reply(res, service.health()); });
  server.Get("/variants",
             [&service, reply](const httplib::Request&, httplib::Response& res) { reply(res, service.variants()); });
  server.Get("/scenes", [&service, reply, param](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.scenes(param(req, "split"), param(req, "page"), param(req, "page_size")));
  });
  server.Get(R"(/scenes/([^/]+)/concepts)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.concepts(req.matches[1]));
  });
  server.Get(R"(/scenes/([^/]+))", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.scene(req.matches[1]));
  });
  server.Post("/generate", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      reply(res, error(400, std::string("invalid JSON: ") + e.what()));
      return;
    }
    reply(res, service.generate(body));
  });
  server.set_exception_handler([reply](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      reply(res, error(500, e.what()));
    }
  });
}

void serve(const GuidanceService& service, const std::string& host, int port, const std::filesystem::path& static_dir) {
  httplib::Server server;
  bind_routes(server, service);
  if (!static_dir.empty() && !server.set_mount_point("/ui", static_dir.string()))
    throw std::runtime_error("cannot mount static directory " + static_dir.string());
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace gvqg::service
