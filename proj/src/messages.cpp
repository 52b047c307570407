#include "ccic/messages.hpp"

#include <algorithm>
#include <cmath>

namespace ccic {

using nlohmann::json;

namespace {

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw PreconditionError(std::string("malformed ") + what + ": " + e.what());
  }
}

}  // namespace

json to_json(const SiteStatus& s) {
  json loops = json::array();
  for (const auto& l : s.loops)
    loops.push_back({{"loop_id", l.loop_id}, {"state", l.state}, {"confidence", l.confidence}, {"anomaly", l.anomaly}});
  json active = json::array();
  for (const auto& a : s.active_advisories) active.push_back({{"severity", a.severity}, {"category", a.category}});
  json actions = json::array();
  for (const auto& a : s.operator_actions) actions.push_back({{"action_id", a.action_id}, {"kind", a.kind}});
  return {{"site_id", s.site_id},
          {"sim_time", s.sim_time},
          {"seq", s.seq},
          {"infrastructure_kind", s.infrastructure_kind},
          {"loops", loops},
          {"advisory_counts", s.advisory_counts},
          {"active_advisories", active},
          {"link_health", s.link_health},
          {"availability", s.availability},
          {"isolated", s.isolated},
          {"command_acks", s.command_acks},
          {"operator_actions", actions}};
}

SiteStatus site_status_from_json(const json& j) {
  return guarded("site status", [&] {
    SiteStatus s;
    s.site_id = j.at("site_id").get<std::string>();
    s.sim_time = j.at("sim_time").get<double>();
    s.seq = j.at("seq").get<std::uint64_t>();
    s.infrastructure_kind = j.value("infrastructure_kind", std::string{});
    for (const auto& l : j.at("loops")) {
      LoopStatus ls{l.at("loop_id"), l.at("state"), l.at("confidence"), l.at("anomaly")};
      if (!(ls.confidence >= 0.0 && ls.confidence <= 1.0))
        throw PreconditionError("site status: confidence outside [0,1] for loop " + ls.loop_id);
      s.loops.push_back(std::move(ls));
    }
    s.advisory_counts = j.value("advisory_counts", std::map<std::string, int>{});
    for (const auto& a : j.value("active_advisories", json::array()))
      s.active_advisories.push_back({a.at("severity"), a.at("category")});
    s.link_health = j.value("link_health", std::string("up"));
    s.availability = j.value("availability", std::map<std::string, double>{});
    s.isolated = j.value("isolated", false);
    s.command_acks = j.value("command_acks", std::vector<std::string>{});
    for (const auto& a : j.value("operator_actions", json::array())) s.operator_actions.push_back({a.at("action_id"), a.at("kind")});
    return s;
  });
}

const std::vector<std::string>& command_kinds() {
  static const std::vector<std::string> kinds = {"precautionary_isolate", "prepare_for_outage", "reroute_resource",
                                                 "ration_resource",       "alert_public",       "deploy_countermeasures"};
  return kinds;
}

bool is_command_kind(const std::string& kind) {
  const auto& k = command_kinds();
  return std::find(k.begin(), k.end(), kind) != k.end();
}

json to_json(const CommunityCommand& c) {
  return {{"command_id", c.command_id}, {"target_site", c.target_site},
          {"kind", c.kind},             {"params", c.params},
          {"issued_by", c.issued_by},   {"mode", c.mode == CommandMode::manual ? "manual" : "automated"},
          {"sim_time", c.sim_time}};
}

CommunityCommand command_from_json(const json& j) {
  return guarded("community command", [&] {
    CommunityCommand c;
    c.command_id = j.value("command_id", std::string{});
    c.target_site = j.at("target_site").get<std::string>();
    c.kind = j.at("kind").get<std::string>();
    const auto params = j.value("params", json::object());
    for (const auto& [k, v] : params.items())
      c.params[k] = v.is_string() ? v.get<std::string>() : v.dump();
    c.issued_by = j.value("issued_by", std::string{});
    const auto mode = j.value("mode", std::string("manual"));
    if (mode == "manual")
      c.mode = CommandMode::manual;
    else if (mode == "automated")
      c.mode = CommandMode::automated;
    else
      throw PreconditionError("community command: unknown mode '" + mode + "'");
    c.sim_time = j.value("sim_time", 0.0);
    return c;
  });
}

std::string to_string(OperatorActionKind k) {
  switch (k) {
    case OperatorActionKind::acknowledge: return "acknowledge";
    case OperatorActionKind::apply_suggestion: return "apply_suggestion";
    case OperatorActionKind::manual_override: return "manual_override";
    case OperatorActionKind::isolate_network: return "isolate_network";
    case OperatorActionKind::validate_sensor: return "validate_sensor";
  }
  return "?";
}

OperatorActionKind operator_action_kind_from(const std::string& s) {
  for (auto k : {OperatorActionKind::acknowledge, OperatorActionKind::apply_suggestion,
                 OperatorActionKind::manual_override, OperatorActionKind::isolate_network,
                 OperatorActionKind::validate_sensor})
    if (to_string(k) == s) return k;
  throw PreconditionError("unknown operator action kind '" + s + "'");
}

json to_json(const OperatorAction& a) {
  json j = {{"action_id", a.action_id}, {"site_id", a.site_id},     {"kind", to_string(a.kind)},
            {"params", a.params},       {"issued_by", a.issued_by}, {"sim_time", a.sim_time}};
  j["advisory_id"] = a.advisory_id ? json(*a.advisory_id) : json(nullptr);
  return j;
}

OperatorAction operator_action_from_json(const json& j) {
  return guarded("operator action", [&] {
    if (!j.is_object()) throw PreconditionError("operator action must be a JSON object");
    OperatorAction a;
    a.action_id = j.value("action_id", std::string{});
    a.site_id = j.value("site_id", std::string{});
    if (j.contains("advisory_id") && !j.at("advisory_id").is_null()) a.advisory_id = j.at("advisory_id").get<std::string>();
    a.kind = operator_action_kind_from(j.at("kind").get<std::string>());
    a.params = j.value("params", json::object());
    if (!a.params.is_object()) throw PreconditionError("operator action params must be an object");
    a.issued_by = j.value("issued_by", std::string{});
    a.sim_time = j.value("sim_time", 0.0);
    if (!std::isfinite(a.sim_time)) throw PreconditionError("operator action sim_time is not finite");
    return a;
  });
}

}  // namespace ccic
