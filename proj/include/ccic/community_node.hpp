#pragma once

// Layer-2 node: collects site statuses, classifies the community state with
// the same MLP machinery the loops use, runs the interdependency and policy
// rules, and keeps the picture the council operator sees.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccic/detector.hpp"
#include "ccic/event_log.hpp"
#include "ccic/link.hpp"
#include "ccic/messages.hpp"
#include "ccic/plant.hpp"
#include "ccic/rbes.hpp"

namespace ccic::community {

// --- status vector ---------------------------------------------------------

/// Per-site features fed to the community classifier, in this order.
const std::vector<std::string>& site_features();

struct SiteFeatures {
  double anomaly_fraction = 0.0;  // debounced-anomalous loops / loops
  double min_confidence = 1.0;
  double critical_count = 0.0;
  double min_availability = 1.0;  // over provided resources
  double link = 0.0;              // 0 up, 0.5 degraded, 1 down
  double missing = 0.0;           // 1 when no recent status
};

SiteFeatures features_of(const SiteStatus& s);
SiteFeatures missing_features();

/// Variable names "<site>.<feature>" for the concatenated vector.
std::vector<VarId> feature_names(const std::vector<SiteId>& sites);
std::vector<double> feature_vector(const std::vector<SiteId>& sites, const std::map<SiteId, SiteFeatures>& f);

inline const std::vector<std::string>& community_states() {
  static const std::vector<std::string> s = {"nominal", "localized_incident", "community_incident"};
  return s;
}

/// Labelled status vectors spanning the three community states: clean
/// operation, an incident at one site, incidents at two or more sites.
detector::TrainingSet synthesize_training(const std::vector<SiteId>& sites, std::size_t per_state, std::uint64_t seed);

/// Community classifier trained on `synthesize_training` output.
detector::LoopClassifier train_classifier(const std::vector<SiteId>& sites, std::size_t per_state = 600,
                                          std::uint64_t seed = 7);

struct CommunityState {
  std::string label;
  double confidence = 0.0;
  std::vector<SiteId> outlier_sites;
  std::vector<SiteId> missing_sites;
};

/// MLP classification plus the missing-site marker rule: any missing site
/// lifts a nominal result to localized_incident and is listed as an outlier.
/// Outlier sites also include any site outside the nominal-state envelope.
CommunityState classify_community(const detector::LoopClassifier& c, const std::vector<SiteId>& sites,
                                  const std::map<SiteId, SiteFeatures>& features);

// --- impact assessment -----------------------------------------------------

struct Impact {
  std::string node;  // site or graph-only consumer (e.g. hospital)
  plant::Resource resource = plant::Resource::electric_power;  // resource of the last hop
  double severity = 0.0;  // product of edge criticalities along the worst path
  std::vector<std::string> path;
  bool operator==(const Impact&) const = default;
};

/// Worst-path (max product of criticality) reach from degraded nodes over
/// simple paths, one entry per (node, last-hop resource) with severity > 0,
/// sorted by node then resource.
std::vector<Impact> impact_assessment(const std::vector<plant::InterdependencyEdge>& edges,
                                      const std::set<std::string>& degraded);

nlohmann::json to_json(const Impact& i);

// --- node --------------------------------------------------------------------

struct CommunityConfig {
  link::NodeId id = "community";
  std::vector<SiteId> sites;
  std::map<SiteId, std::string> site_kinds;
  std::vector<plant::InterdependencyEdge> edges;
  rbes::RuleSet rules;
  std::optional<detector::LoopClassifier> classifier;
  std::set<std::string> automation_allowlist = {"precautionary_isolate", "prepare_for_outage", "reroute_resource",
                                                "deploy_countermeasures"};
  double missing_after_s = 30.0;
  double degraded_availability = 0.95;
  double advisory_window_s = 300.0;
  link::LinkConfig link;
};

struct CommandRecord {
  CommunityCommand command;
  bool downlinked = false;
  std::optional<SimTime> acknowledged_at;
};

struct PictureEdge {
  plant::InterdependencyEdge edge;
  double availability = 1.0;  // provider's delivery of the resource
};

struct CommunityPicture {
  SimTime sim_time = 0.0;
  std::vector<SiteId> sites;
  std::map<SiteId, std::optional<SiteStatus>> statuses;
  std::map<SiteId, std::string> link_health;  // community's view of each site link
  std::vector<PictureEdge> edges;
  std::vector<rbes::Advisory> advisories;  // community advisories
  std::map<SiteId, std::vector<rbes::Advisory>> site_advisories;  // received over the uplink
  std::vector<CommandRecord> commands;
  CommunityState state;
  std::vector<Impact> impact;
};

nlohmann::json to_json(const CommunityPicture& p);

class CommunityNode {
 public:
  /// Throws ConfigError when the classifier is missing or was trained for
  /// a different site list, or when a site appears twice.
  CommunityNode(CommunityConfig config, link::Transport& transport, events::EventLog& log);

  /// Receive, classify, reason, issue automated commands, service links.
  void tick(SimTime now);

  /// Returns false (and counts) when the status is stale or from an unknown site.
  bool ingest_status(const SiteStatus& status, SimTime now);

  /// Validates and issues a command. Throws NotFoundError for an unknown
  /// site, PreconditionError for an unknown kind, a manual command without an
  /// issuer, or an automated command outside the allowlist.
  CommunityCommand issue_command(CommunityCommand command, SimTime now);

  const CommunityPicture& picture() const { return picture_; }
  const CommunityConfig& config() const { return cfg_; }
  link::Endpoint& link() { return endpoint_; }
  std::uint64_t stale_statuses() const { return stale_; }
  const rbes::InferenceResult& last_inference() const { return last_inference_; }

  /// Facts for the community rules given the current picture.
  std::vector<rbes::Fact> facts(SimTime now) const;

  /// Degraded nodes under the current picture: low availability, a
  /// critical advisory, or missing.
  std::set<std::string> degraded_sites(SimTime now) const;

 private:
  void log(SimTime t, const std::string& kind, nlohmann::json payload);
  void receive(SimTime now);
  bool is_missing(const SiteId& s, SimTime now) const;

  CommunityConfig cfg_;
  events::EventLog& log_;
  link::Endpoint endpoint_;
  CommunityPicture picture_;
  std::map<SiteId, std::uint64_t> last_seq_;
  std::map<SiteId, SimTime> last_status_at_;
  std::uint64_t stale_ = 0;
  std::map<std::string, SimTime> episode_last_;
  std::set<std::string> prev_derived_;
  std::set<std::string> standing_actions_;  // automated commands already issued for a standing condition
  std::uint64_t next_command_ = 1;
  std::uint64_t next_advisory_ = 1;
  std::map<std::string, std::size_t> command_index_;
  rbes::InferenceResult last_inference_;
};

}  // namespace ccic::community
