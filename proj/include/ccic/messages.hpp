#pragma once

// Values exchanged between the local and community layers and with the
// console: site status vectors, community commands and operator actions.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccic/common.hpp"

namespace ccic {

struct LoopStatus {
  LoopId loop_id;
  std::string state;
  double confidence = 0.0;
  bool anomaly = false;
  bool operator==(const LoopStatus&) const = default;
};

struct ActiveAdvisory {
  std::string severity;
  std::string category;
  bool operator==(const ActiveAdvisory&) const = default;
};

struct ActionEcho {
  std::string action_id;
  std::string kind;
  bool operator==(const ActionEcho&) const = default;
};

struct SiteStatus {
  SiteId site_id;
  SimTime sim_time = 0.0;
  std::uint64_t seq = 0;  // per site, strictly increasing
  std::string infrastructure_kind;
  std::vector<LoopStatus> loops;
  std::map<std::string, int> advisory_counts;  // info / warning / critical, currently raised
  std::vector<ActiveAdvisory> active_advisories;
  std::string link_health = "up";  // worst over the site's links
  std::map<std::string, double> availability;  // provided resources
  bool isolated = false;
  std::vector<std::string> command_acks;  // command ids received since the last status
  std::vector<ActionEcho> operator_actions;  // operator actions since the last status
  bool operator==(const SiteStatus&) const = default;
};

nlohmann::json to_json(const SiteStatus& s);
SiteStatus site_status_from_json(const nlohmann::json& j);

enum class CommandMode { manual, automated };

/// Kinds the community layer can issue.
const std::vector<std::string>& command_kinds();
bool is_command_kind(const std::string& kind);

struct CommunityCommand {
  std::string command_id;
  SiteId target_site;
  std::string kind;
  std::map<std::string, std::string> params;
  std::string issued_by;
  CommandMode mode = CommandMode::manual;
  SimTime sim_time = 0.0;
  bool operator==(const CommunityCommand&) const = default;
};

nlohmann::json to_json(const CommunityCommand& c);
/// Parses the wire / API form. Unknown kinds are accepted here (the local
/// node reports them); malformed fields throw PreconditionError.
CommunityCommand command_from_json(const nlohmann::json& j);

enum class OperatorActionKind { acknowledge, apply_suggestion, manual_override, isolate_network, validate_sensor };
std::string to_string(OperatorActionKind k);
OperatorActionKind operator_action_kind_from(const std::string& s);

struct OperatorAction {
  std::string action_id;
  SiteId site_id;
  std::optional<std::string> advisory_id;
  OperatorActionKind kind = OperatorActionKind::acknowledge;
  nlohmann::json params = nlohmann::json::object();
  std::string issued_by;
  SimTime sim_time = 0.0;
};

nlohmann::json to_json(const OperatorAction& a);
/// Throws PreconditionError on malformed input.
OperatorAction operator_action_from_json(const nlohmann::json& j);

}  // namespace ccic
