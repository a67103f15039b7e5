#pragma once
// Read-only inference API over trained checkpoints: scene browsing, candidate
// concepts for the actor, and guided question generation.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gvqg/harness.hpp"
#include "gvqg/models.hpp"
#include "gvqg/world.hpp"

namespace httplib {
class Server;
}

namespace gvqg::service {

using nlohmann::json;

struct Response {
  int status = 200;
  json body;
};

struct ServedVariant {
  std::string name;
  std::filesystem::path checkpoint;
  std::shared_ptr<const models::Model> model;  // null when the checkpoint is missing
  std::string load_error;
};

class GuidanceService {
 public:
  GuidanceService(world::Dataset dataset, harness::WorldSpec spec, std::vector<ServedVariant> variants);

  // Manifest: {"world": {...} | "dataset": dir, "variants": [{"name", "checkpoint"}]}.
  // Relative paths resolve against the manifest's directory. Missing or
  // unreadable checkpoints leave the variant listed but unavailable.
  static GuidanceService from_manifest(const std::filesystem::path& manifest);

  Response health() const;
  Response variants() const;
  Response scenes(const std::optional<std::string>& split, const std::optional<std::string>& page,
                  const std::optional<std::string>& page_size) const;
  Response scene(const std::string& id) const;
  Response concepts(const std::string& id) const;
  Response generate(const json& request) const;

  int k_max() const { return k_max_; }
  const world::Dataset& dataset() const { return dataset_; }

 private:
  struct SceneView {
    const world::Scene* scene = nullptr;
    world::ObjectDetection detection;
    concepts::ConceptSet candidates;
  };

  const SceneView* find(const std::string& id) const;
  json summary(const world::Scene& s) const;

  world::Dataset dataset_;
  harness::WorldSpec spec_;
  std::vector<ServedVariant> variants_;
  std::map<std::string, SceneView> views_;
  int k_max_ = 2;
};

// Registers every endpoint on `server`.
void bind_routes(httplib::Server& server, const GuidanceService& service);

// Blocks until the server stops.
void serve(const GuidanceService& service, const std::string& host, int port,
           const std::filesystem::path& static_dir = {});

}  // namespace gvqg::service
