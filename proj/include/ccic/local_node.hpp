#pragma once

// Layer-1 node for one site. Each tick it reads the plant through the tap,
// classifies every loop, runs the local rules and turns the result into
// operator advisories, an uplink status and peer alerts. It never writes to
// the plant: operator actions come back as PlantCommands for the caller to
// route through the plant's own operator command path.

#include <deque>
#include <map>
#include <memory>
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

namespace ccic::node {

struct RetrainPolicy {
  bool enabled = false;
  double period_s = 3600.0;
  double fraction = 0.20;
  std::size_t min_rows = 200;      // clean rows needed per loop
  std::size_t max_recent = 20000;  // clean rows kept per loop
  detector::TrainingOptions training;
};

struct LocalNodeConfig {
  plant::PlantSpec plant;
  std::map<LoopId, detector::LoopClassifier> classifiers;
  std::map<LoopId, detector::TrainingSet> original_training;  // needed only for retraining
  rbes::RuleSet rules;
  std::vector<plant::InterdependencyEdge> edges;  // whole community graph
  link::NodeId community_id = "community";
  bool uplink = true;
  std::vector<SiteId> peers;  // sites this node exchanges peer alerts with
  link::LinkConfig link;
  int anomaly_debounce = 3;         // consecutive anomalous ticks before anomaly()
  double advisory_window_s = 300;   // an episode re-alerts only after this much quiet
  double peer_fact_ttl_s = 300;
  double peer_refresh_s = 120;      // re-offer a persisting anomaly to peers
  double command_ttl_s = 1800;
  std::set<std::string> auto_apply;  // command kinds applied to link policy without an operator
  RetrainPolicy retrain;
};

/// Peers along interdependency edges that touch `site`, restricted to `sites`.
std::vector<SiteId> edge_peers(const SiteId& site, const std::vector<plant::InterdependencyEdge>& edges,
                               const std::vector<SiteId>& sites);

using ClassifierSet = std::map<LoopId, detector::LoopClassifier>;

struct TickReport {
  SimTime sim_time = 0.0;
  std::vector<detector::Classification> classifications;
  std::vector<rbes::Advisory> raised;          // every advisory the rules produced this tick
  std::vector<rbes::Advisory> new_advisories;  // those surfaced to the operator
  std::vector<rbes::Fact> new_facts;           // derived facts that were not present last tick
  std::set<LoopId> anomalous_loops;            // debounced
  SiteStatus status;
  std::string model_fingerprint;  // identity of the classifier set used for the whole tick
};

struct ActionOutcome {
  nlohmann::json event;
  std::vector<plant::PlantCommand> plant_commands;
};

class LocalNode {
 public:
  /// Throws ConfigError when a plant loop lacks a classifier (or has a
  /// mismatched one) or the auto-apply list names a kind with plant effects.
  LocalNode(LocalNodeConfig config, link::Transport& transport, events::EventLog& log);

  const SiteId& site() const { return cfg_.plant.site_id; }
  const LocalNodeConfig& config() const { return cfg_; }

  /// One pass of the pipeline at state.sim_time.
  TickReport tick(const plant::PlantState& state);

  /// Operator action intake. Throws NotFoundError (unknown advisory),
  /// ConflictError (advisory already in that state) or PreconditionError
  /// (malformed action).
  ActionOutcome handle_operator_action(const OperatorAction& action);

  std::vector<rbes::Advisory> advisories() const;
  std::optional<rbes::Advisory> advisory(const std::string& id) const;
  const SiteStatus& last_status() const { return status_; }
  const rbes::InferenceResult& last_inference() const { return last_inference_; }

  std::shared_ptr<const ClassifierSet> classifiers() const { return classifiers_; }
  static std::string fingerprint_of(const ClassifierSet& set);

  link::Endpoint& link() { return endpoint_; }
  const link::Endpoint& link() const { return endpoint_; }
  bool isolated() const { return endpoint_.isolated(); }
  const std::set<LoopId>& manual_loops() const { return manual_; }
  const std::set<VarId>& validated_vars() const { return validated_; }

  /// Clean rows collected per loop since start (capped).
  std::size_t recent_rows(const LoopId& loop) const;
  /// Runs a retrain now if due (also called from tick). Returns true when a
  /// new classifier set was swapped in.
  bool maybe_retrain(SimTime now);

 private:
  struct Timed {
    rbes::Fact fact;
    SimTime expires = 0.0;
  };
  struct Recent {
    std::deque<std::vector<double>> x;
    std::deque<std::string> labels;
  };

  void log(SimTime t, const std::string& kind, nlohmann::json payload);
  void receive(SimTime now);
  void on_command(const link::Envelope& e, SimTime now);
  void on_peer_alert(const link::Envelope& e, SimTime now);
  void set_isolated(bool on, SimTime now, const std::string& reason);
  std::vector<rbes::Fact> static_facts() const;
  void send(const link::NodeId& dst, link::Kind kind, nlohmann::json payload, SimTime now);

  LocalNodeConfig cfg_;
  events::EventLog& log_;
  link::Endpoint endpoint_;
  std::shared_ptr<const ClassifierSet> classifiers_;
  std::vector<rbes::Fact> static_;
  SimTime now_ = 0.0;

  std::map<LoopId, int> anomalous_streak_;
  std::map<std::string, SimTime> episode_last_;
  std::set<std::string> prev_derived_;
  std::map<std::string, SimTime> peer_offered_;  // local fact key -> last offer time
  std::map<std::string, Timed> peer_facts_;
  std::map<std::string, CommunityCommand> commands_;
  std::map<std::string, SimTime> command_expiry_;
  std::map<std::string, Timed> unknown_commands_;
  std::set<LoopId> manual_;
  std::set<VarId> validated_;

  std::vector<rbes::Advisory> advisories_;
  std::map<std::string, std::size_t> advisory_index_;
  std::uint64_t next_advisory_ = 1;

  SiteStatus status_;
  std::uint64_t status_seq_ = 0;
  std::vector<std::string> pending_acks_;
  std::vector<ActionEcho> pending_actions_;

  std::map<LoopId, Recent> recent_;
  SimTime last_retrain_ = 0.0;
  rbes::InferenceResult last_inference_;
};

}  // namespace ccic::node
