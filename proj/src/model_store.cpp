#include "ccic/model_store.hpp"

#include <filesystem>
#include <fstream>

#include "ccic/log.hpp"

namespace ccic::models {

namespace fs = std::filesystem;
using nlohmann::json;

std::string loop_model_path(const std::string& dir, const SiteId& site, const LoopId& loop) {
  return (fs::path(dir) / site / (loop + ".json")).string();
}

std::string community_model_path(const std::string& dir) { return (fs::path(dir) / "community.json").string(); }

void save_classifier(const detector::LoopClassifier& c, const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file " + path);
  out << detector::to_json(c).dump(1) << "\n";
  if (!out) throw Error("failed writing model file " + path);
}

detector::LoopClassifier load_classifier(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("model file " + path + " not found");
  try {
    return detector::classifier_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError("model file " + path + " is corrupt: " + e.what());
  } catch (const Error& e) {
    throw ConfigError("model file " + path + " is invalid: " + e.what());
  }
}

void save_site_models(const std::string& dir, const SiteId& site, const ClassifierSet& set) {
  for (const auto& [loop, c] : set) save_classifier(c, loop_model_path(dir, site, loop));
}

ClassifierSet load_site_models(const std::string& dir, const plant::PlantSpec& plant, bool allow_stale) {
  ClassifierSet out;
  for (const auto& loop : plant.loops) {
    const auto path = loop_model_path(dir, plant.site_id, loop.loop_id);
    auto c = load_classifier(path);
    if (c.loop_id != loop.loop_id) throw ConfigError("model file " + path + " holds loop '" + c.loop_id + "'");
    if (c.input_vars != loop.input_vars)
      throw ConfigError("model file " + path + " was trained on different input variables");
    if (c.config_hash != plant.config_hash) {
      if (!allow_stale)
        throw ConfigError("model file " + path + " is stale: trained for config " + c.config_hash + ", current " +
                          plant.config_hash + " (retrain or pass --allow-stale)");
      logger()->warn("using stale model {}", path);
    }
    out.emplace(loop.loop_id, std::move(c));
  }
  return out;
}

}  // namespace ccic::models
