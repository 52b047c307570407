#pragma once

// On-disk layout for trained models:
//   <dir>/<site>/<loop>.json   one LoopClassifier per control loop
//   <dir>/community.json       community classifier
//   <dir>/report.json          training report

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "ccic/detector.hpp"
#include "ccic/plant.hpp"

namespace ccic::models {

using ClassifierSet = std::map<LoopId, detector::LoopClassifier>;

std::string loop_model_path(const std::string& dir, const SiteId& site, const LoopId& loop);
std::string community_model_path(const std::string& dir);

void save_classifier(const detector::LoopClassifier& c, const std::string& path);

/// Throws ConfigError naming the file when it is missing or corrupt.
detector::LoopClassifier load_classifier(const std::string& path);

void save_site_models(const std::string& dir, const SiteId& site, const ClassifierSet& set);

/// Loads one classifier per plant loop and checks it against the plant:
/// loop id, input variables, and config hash. A hash mismatch is a
/// ConfigError unless `allow_stale`, in which case it is only logged.
ClassifierSet load_site_models(const std::string& dir, const plant::PlantSpec& plant, bool allow_stale = false);

}  // namespace ccic::models
