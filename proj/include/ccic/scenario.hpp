#pragma once

// Scenario scripting and execution: the community manifest, scenario files,
// event matchers, the lock-step runner with scripted actors, run metrics
// and log replay.

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccic/community_node.hpp"
#include "ccic/event_log.hpp"
#include "ccic/link.hpp"
#include "ccic/local_node.hpp"
#include "ccic/model_store.hpp"
#include "ccic/plant.hpp"

namespace ccic::scenario {

// --- community manifest ----------------------------------------------------------

struct SiteEntry {
  SiteId id;
  std::string config_path;
  std::string rules_path;
};

struct CommunityManifest {
  link::NodeId community_id = "community";
  std::vector<SiteEntry> sites;
  std::vector<std::string> graph_nodes;  // consumers without a site of their own
  std::vector<plant::InterdependencyEdge> edges;
  std::string community_rules_path;
  std::set<std::string> automation_allowlist;
  link::LinkConfig link;

  std::vector<SiteId> site_ids() const;
};

/// Relative paths inside the manifest resolve against the working directory.
CommunityManifest community_manifest_from_json(const nlohmann::json& j);
CommunityManifest load_community_manifest(const std::string& path);

// --- scenario script -------------------------------------------------------------

/// Pure predicate over one event record. `where` maps dotted payload paths to
/// expected values; when the payload value is an array the expected value
/// must be one of its elements.
struct Matcher {
  std::optional<std::string> site;
  std::string kind;
  nlohmann::json where = nlohmann::json::object();
};

Matcher matcher_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Matcher& m);
bool matches(const Matcher& m, const events::EventRecord& r);

enum class ActionType { operator_action, community_command };

struct ScriptedActor {
  std::string id;
  Matcher trigger;
  double delay_s = 0.0;
  int max_fires = 1;
  ActionType type = ActionType::operator_action;
  SiteId site;             // operator_action: the site whose HMI is used
  std::string kind;        // OperatorActionKind or command kind
  nlohmann::json params = nlohmann::json::object();
  bool use_trigger_advisory = false;  // operator_action: act on the triggering advisory
  SiteId target_site;                 // community_command
};

struct ExpectedEvent {
  std::string name;
  Matcher matcher;
  SimTime deadline = 0.0;
  std::vector<std::string> after;  // must match after these events; default: the previous entry
};

struct RetrainSettings {
  std::set<SiteId> sites;
  double period_s = 3600.0;
  double fraction = 0.20;
  std::size_t min_rows = 200;
};

struct ScenarioScript {
  std::string name;
  double duration_s = 0.0;
  double dt = 1.0;
  std::uint64_t seed = 1;
  std::string community_path = "configs/community.json";
  bool community_enabled = true;
  std::map<SiteId, std::string> initial_modes;
  link::Impairment network;  // applied to every directed pair
  std::optional<RetrainSettings> retrain;
  std::vector<plant::InjectionEvent> injections;
  std::vector<ScriptedActor> actors;
  std::vector<ExpectedEvent> expected_events;
};

plant::InjectionEvent injection_from_json(const nlohmann::json& j);
nlohmann::json to_json(const plant::InjectionEvent& e);

/// Parses and checks structure: version, sorted injections, deadlines
/// within the duration, `after` references to earlier events. Throws ConfigError.
ScenarioScript script_from_json(const nlohmann::json& j);
ScenarioScript load_script(const std::string& path);

/// A script with no injections, actors or expectations.
ScenarioScript free_play(double duration_s, std::uint64_t seed = 1);

// --- runner ----------------------------------------------------------------------

struct SiteModels {
  models::ClassifierSet classifiers;
  std::map<LoopId, detector::TrainingSet> original_training;  // needed when retraining
};

enum class TransportKind { in_process, tcp };

struct RunOptions {
  std::string out_dir;  // per-node logs, timeline and metrics; empty keeps everything in memory
  bool attach_ccic = true;  // false runs the plants alone (observational comparisons)
  bool scripted_actors = true;
  bool record_trajectories = false;
  /// tcp gives every node its own loopback socket; scripted link loss still
  /// works, random drop and delay impairments are in-process only.
  TransportKind transport = TransportKind::in_process;
};

struct InjectionLatency {
  std::size_t injection = 0;  // index into the script
  SiteId site;
  std::string kind;
  std::string target;
  SimTime at_time = 0.0;
  std::optional<double> latency_s;
  std::string advisory_id;
};

struct ExpectedResult {
  std::string name;
  bool passed = false;
  std::optional<SimTime> matched_at;
  std::optional<std::size_t> record_index;
  SimTime deadline = 0.0;
  std::string reason;
};

struct RunMetrics {
  std::string run_id;
  std::string scenario;
  std::uint64_t seed = 0;
  std::size_t ticks = 0;
  std::vector<InjectionLatency> detection;
  std::map<std::string, std::size_t> advisory_counts;  // severity -> count, all nodes
  double false_anomaly_rate = 0.0;  // raw per-loop classifications over the clean interval
  std::size_t clean_classifications = 0;
  std::vector<ExpectedResult> expected;
  double wall_clock_s = 0.0;

  bool all_expected_passed() const;
};

nlohmann::json to_json(const RunMetrics& m);

/// Evaluates expected events against a timeline; pure, so a replayed log
/// gives the same answer as the live run. An event follows its `after`
/// events when it is later in time, or in the same tick and either later in
/// the timeline or from another node.
std::vector<ExpectedResult> evaluate_expected(const std::vector<ExpectedEvent>& expected,
                                              const std::vector<events::EventRecord>& timeline);

class Runner {
 public:
  /// Loads site configs and rules from the manifest. `models` must hold a
  /// classifier set for every site; the community classifier is trained
  /// when absent. Throws ConfigError on any inconsistency, including actor
  /// triggers that name an advisory category no rule can produce.
  Runner(ScenarioScript script, CommunityManifest manifest, std::map<SiteId, SiteModels> models,
         std::optional<detector::LoopClassifier> community_classifier = std::nullopt, RunOptions options = {});
  ~Runner();
  Runner(const Runner&) = delete;
  Runner& operator=(const Runner&) = delete;

  /// Advances every plant and node by one tick.
  void step();
  bool finished() const;
  /// Steps to the end of the script and returns the metrics.
  RunMetrics run();
  RunMetrics metrics() const;

  SimTime now() const { return now_; }
  const ScenarioScript& script() const { return script_; }
  const CommunityManifest& manifest() const { return manifest_; }
  const std::string& run_id() const { return run_id_; }

  /// Operator and council entry points shared by scripted actors and the
  /// serve API. Errors propagate (NotFoundError, ConflictError, ...).
  node::ActionOutcome operator_action(OperatorAction action);
  CommunityCommand community_command(CommunityCommand command);

  /// Injections outside the script (serve mode), applied at the next tick.
  void inject(plant::InjectionEvent e);

  bool has_site(const SiteId& s) const;
  node::LocalNode& local_node(const SiteId& s);
  const node::LocalNode& local_node(const SiteId& s) const;
  community::CommunityNode* community_node() { return community_.get(); }
  /// The site node's report from the most recent tick (empty before the first).
  const node::TickReport& last_report(const SiteId& s) const;
  const plant::PlantState& plant_state(const SiteId& s) const;
  const plant::PlantSpec& plant_spec(const SiteId& s) const;
  link::InProcessNetwork& network() { return net_; }
  bool link_severed(const link::NodeId& a, const link::NodeId& b) const;

  /// The per-node logs merged exactly as replay() merges their files; expected
  /// events are evaluated on this order.
  std::vector<events::EventRecord> merged_timeline() const;

  /// Combined timeline of every node in append order.
  events::EventLog& timeline() { return timeline_; }
  const events::EventLog& timeline() const { return timeline_; }
  events::EventLog& node_log(const std::string& node);

  /// Per-tick plant states when RunOptions::record_trajectories is set.
  const std::map<SiteId, std::vector<plant::PlantState>>& trajectories() const { return trajectories_; }

  /// The community picture, or a site-only view when the community is disabled.
  nlohmann::json picture() const;

  /// Writes metrics.json into the output directory (if any).
  void write_metrics(const RunMetrics& m) const;

 private:
  struct Site {
    SiteEntry entry;
    plant::PlantSpec spec;
    plant::PlantState state;
    std::unique_ptr<node::LocalNode> node;
    node::TickReport last;
  };
  struct Pending {
    SimTime due;
    std::size_t actor;
    events::EventRecord trigger;
  };

  void apply_injection(const plant::InjectionEvent& e);
  void scan_triggers();
  void fire(const Pending& p);
  plant::ExternalInputs inputs_for(const SiteId& consumer) const;
  void start_logs();
  link::Transport& transport_for(const link::NodeId& node);
  void set_severed(const link::NodeId& a, const link::NodeId& b, bool severed);

  ScenarioScript script_;
  CommunityManifest manifest_;
  RunOptions opt_;
  std::string run_id_;
  link::InProcessNetwork net_;
  std::map<link::NodeId, std::unique_ptr<link::Transport>> sockets_;  // tcp mode
  std::set<std::pair<link::NodeId, link::NodeId>> severed_;
  std::map<std::string, std::unique_ptr<events::EventLog>> logs_;
  events::EventLog timeline_;
  std::vector<Site> sites_;
  std::map<SiteId, std::size_t> site_index_;
  std::unique_ptr<community::CommunityNode> community_;

  SimTime now_ = 0.0;
  std::size_t ticks_ = 0;
  std::size_t next_injection_ = 0;
  std::vector<plant::InjectionEvent> live_injections_;
  std::size_t scanned_ = 0;
  std::vector<int> fired_;
  std::vector<Pending> pending_;
  std::uint64_t next_action_ = 1;
  std::size_t clean_total_ = 0;
  std::size_t clean_anomalous_ = 0;
  std::map<SiteId, std::vector<plant::PlantState>> trajectories_;
  std::chrono::steady_clock::time_point started_;
  double elapsed_s_ = 0.0;
};

/// Loads <models_dir>/<site>/*.json for every manifest site, plus the
/// community classifier when present. Original training sets are read from
/// <history_dir>/<site> archives when `history_dir` is not empty.
std::map<SiteId, SiteModels> load_models(const CommunityManifest& manifest, const std::string& models_dir,
                                         const std::string& history_dir = {}, bool allow_stale = false);
std::optional<detector::LoopClassifier> load_community_model(const std::string& models_dir);

// --- replay ----------------------------------------------------------------------

/// Merges the per-node logs in `dir` (every *.log.jsonl except the combined
/// timeline) into one ordered timeline. Throws ParseError on corrupt logs or
/// logs from different runs.
std::vector<events::EventRecord> replay(const std::string& dir);
std::vector<events::EventRecord> replay(const std::vector<std::string>& log_paths);

}  // namespace ccic::scenario
